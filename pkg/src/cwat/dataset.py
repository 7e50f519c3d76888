"""Indexable collections of labelled segments, held in memory or read lazily from the cache."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cwat.errors import DataError
from cwat.preprocess import read_manifest, read_segment


@dataclass(frozen=True)
class SegmentInfo:
    case_id: str
    subject_id: str
    label: int


class SegmentSet:
    """Segments addressed by position.

    Either ``arrays`` (one ``(C, T)`` array per segment) or ``paths`` (cache
    files) backs the data; metadata is always in memory.
    """

    def __init__(self, info, arrays=None, paths=None):
        self.info = list(info)
        if (arrays is None) == (paths is None):
            raise ValueError("give exactly one of arrays or paths")
        self.arrays = list(arrays) if arrays is not None else None
        self.paths = list(paths) if paths is not None else None
        backing = self.arrays if self.arrays is not None else self.paths
        if len(backing) != len(self.info):
            raise ValueError("metadata and data lengths differ")

    @classmethod
    def from_segments(cls, segments):
        info = [SegmentInfo(s.case_id, s.subject_id, int(s.label)) for s in segments]
        return cls(info, arrays=[np.asarray(s.data, dtype=np.float64) for s in segments])

    @classmethod
    def from_manifest(cls, path):
        entries = read_manifest(path)
        if not entries:
            raise DataError(f"{path}: manifest lists no segments")
        info = [SegmentInfo(e.case_id, e.subject_id, e.label) for e in entries]
        return cls(info, paths=[e.path for e in entries])

    def __len__(self):
        return len(self.info)

    @property
    def labels(self):
        return np.array([i.label for i in self.info], dtype=np.int64)

    @property
    def case_ids(self):
        return [i.case_id for i in self.info]

    @property
    def subject_ids(self):
        return [i.subject_id for i in self.info]

    def load(self, indices):
        """Stack the segments at ``indices`` into ``(len(indices), C, T)``."""
        if self.arrays is not None:
            return np.stack([self.arrays[i] for i in indices])
        return np.stack([read_segment(self.paths[i]).data for i in indices])

    def subset(self, indices):
        indices = list(indices)
        info = [self.info[i] for i in indices]
        if self.arrays is not None:
            return SegmentSet(info, arrays=[self.arrays[i] for i in indices])
        return SegmentSet(info, paths=[self.paths[i] for i in indices])
