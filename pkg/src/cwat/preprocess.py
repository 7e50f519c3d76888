"""Recording -> model-ready segments: downsample, cut fixed windows, z-normalise.

Also owns the on-disk segment cache (one binary file per segment plus a CSV
manifest) that the training and evaluation commands read.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import firwin, resample_poly

from cwat.edfio import MONTAGE_10_20, read_edf, select_montage
from cwat.errors import DataError, InputError

TARGET_RATE_HZ = 100.0
SEGMENT_SECONDS = 120.0
MIN_RECORDING_SECONDS = 15 * 60.0
FIR_TAPS = 127
CUTOFF_FRACTION = 0.45  # of the target rate
ZNORM_FLOOR = 1e-12

CACHE_MAGIC = b"CWAT"
CACHE_VERSION = 1
MANIFEST_FIELDS = ("path", "case_id", "subject_id", "label")


@dataclass
class Segment:
    data: np.ndarray  # (C, T')
    label: int  # 0 normal, 1 abnormal
    subject_id: str
    case_id: str
    segment_index: int


def anti_alias_filter(from_hz, to_hz, up=1):
    """Hamming-window low-pass FIR with cutoff at 0.45 x the target rate."""
    return firwin(FIR_TAPS, CUTOFF_FRACTION * to_hz, window="hamming", fs=from_hz * up)


def rate_ratio(from_hz, to_hz):
    ratio = Fraction(to_hz / from_hz).limit_denominator(10_000)
    return ratio.numerator, ratio.denominator


def downsample(series, from_hz, to_hz=TARGET_RATE_HZ):
    """Low-pass and resample along the last axis by the rational factor ``to_hz / from_hz``.

    Output length is ``floor(n * to_hz / from_hz)``.  The filter is linear
    phase with its delay compensated, so there is no time shift.
    """
    x = np.asarray(series, dtype=np.float64)
    if from_hz < to_hz:
        raise InputError(f"upsampling from {from_hz} Hz to {to_hz} Hz is not supported")
    if from_hz == to_hz:
        return x.copy()
    up, down = rate_ratio(from_hz, to_hz)
    h = anti_alias_filter(from_hz, to_hz, up)
    y = resample_poly(x, up, down, axis=-1, window=h)
    n_out = math.floor(x.shape[-1] * to_hz / from_hz)
    return np.ascontiguousarray(y[..., :n_out])


def downsample_recording(rec, to_hz=TARGET_RATE_HZ):
    channels = [
        dataclasses.replace(ch, rate_hz=float(to_hz), samples=downsample(ch.samples, ch.rate_hz, to_hz))
        for ch in rec.channels
    ]
    return dataclasses.replace(rec, channels=channels)


def segment(rec, window_seconds=SEGMENT_SECONDS):
    """Cut a single-rate recording into consecutive non-overlapping windows.

    The trailing remainder shorter than a window is dropped.
    """
    rate = rec.rate_hz
    width = window_seconds * rate
    if not float(width).is_integer():
        raise InputError(f"{window_seconds}s at {rate} Hz is not a whole number of samples")
    width = int(width)
    x = rec.as_array()
    label = -1 if rec.case_label is None else int(rec.case_label)
    return [
        Segment(x[:, i * width:(i + 1) * width].copy(), label, rec.subject_id, rec.case_id, i)
        for i in range(x.shape[1] // width)
    ]


def znorm_array(x):
    """Per-row ``(x - mean) / std`` with population std; near-constant rows become zeros."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    centred = x - mu
    sigma = np.sqrt((centred * centred).mean(axis=-1, keepdims=True))
    flat = sigma < ZNORM_FLOOR
    out = centred / np.where(flat, 1.0, sigma)
    return np.where(flat, 0.0, out)


def znorm(seg):
    return dataclasses.replace(seg, data=znorm_array(seg.data))


def preprocess_recording(
    rec,
    target_rate=TARGET_RATE_HZ,
    window_seconds=SEGMENT_SECONDS,
    montage=MONTAGE_10_20,
    min_duration_seconds=None,
):
    """Montage selection, resampling, segmentation and z-normalisation for one recording."""
    if montage:
        rec = select_montage(rec, montage)
    if min_duration_seconds is not None and rec.duration_seconds < min_duration_seconds:
        return []
    rec = downsample_recording(rec, target_rate)
    return [znorm(s) for s in segment(rec, window_seconds)]


# ---------------------------------------------------------------- segment cache


def _pack_text(text):
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_segment(seg):
    c, t = seg.data.shape
    head = CACHE_MAGIC + struct.pack("<HHIB", CACHE_VERSION, c, t, seg.label & 0xFF)
    ids = b"".join(_pack_text(s) for s in (seg.subject_id, seg.case_id, str(seg.segment_index)))
    return head + ids + np.ascontiguousarray(seg.data, dtype="<f8").tobytes()


def decode_segment(data, header_only=False):
    if data[:4] != CACHE_MAGIC:
        raise DataError("not a segment cache file (bad magic)")
    version, c, t, label = struct.unpack_from("<HHIB", data, 4)
    if version != CACHE_VERSION:
        raise DataError(f"unsupported segment cache version {version}")
    pos = 4 + struct.calcsize("<HHIB")
    ids = []
    for _ in range(3):
        (n,) = struct.unpack_from("<H", data, pos)
        ids.append(bytes(data[pos + 2:pos + 2 + n]).decode("utf-8"))
        pos += 2 + n
    label = -1 if label == 0xFF else label
    if header_only:
        return Segment(None, label, ids[0], ids[1], int(ids[2])), pos, (c, t)
    expected = pos + 8 * c * t
    if len(data) < expected:
        raise DataError(f"segment cache file truncated: {len(data)} < {expected} bytes")
    x = np.frombuffer(data, dtype="<f8", count=c * t, offset=pos).reshape(c, t).astype(np.float64)
    return Segment(x, label, ids[0], ids[1], int(ids[2]))


def write_segment(path, seg):
    with open(path, "wb") as fh:
        fh.write(encode_segment(seg))


def read_segment(path):
    with open(path, "rb") as fh:
        return decode_segment(fh.read())


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # absolute
    case_id: str
    subject_id: str
    label: int


def write_manifest(path, entries):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for e in entries:
            w.writerow([os.path.relpath(e.path, base), e.case_id, e.subject_id, e.label])


def read_manifest(path):
    if not os.path.isfile(path):
        raise DataError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != MANIFEST_FIELDS:
        raise DataError(f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_FIELDS):
            raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} columns")
        try:
            label = int(row[3])
        except ValueError:
            raise DataError(f"{path}:{lineno}: label {row[3]!r} is not an integer") from None
        entries.append(ManifestEntry(os.path.join(base, row[0]), row[1], row[2], label))
    return entries


def save_segments(segments, out_dir, manifest_name="manifest.csv"):
    """Write each segment to ``out_dir`` and return the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for seg in segments:
        name = f"{_safe(seg.case_id)}_{seg.segment_index:04d}.seg"
        path = os.path.join(out_dir, name)
        write_segment(path, seg)
        entries.append(ManifestEntry(path, seg.case_id, seg.subject_id, seg.label))
    manifest = os.path.join(out_dir, manifest_name)
    write_manifest(manifest, entries)
    return manifest


def _safe(name):
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name) or "case"


# ---------------------------------------------------------------- EDF directories


def label_from_path(path):
    """TUH-style trees put recordings under ``normal/`` or ``abnormal/`` directories."""
    parts = [p.lower() for p in os.path.normpath(path).split(os.sep)]
    if "abnormal" in parts:
        return 1
    if "normal" in parts:
        return 0
    return None


def find_edf_files(root):
    found = []
    for dirpath, _, files in os.walk(root):
        found.extend(os.path.join(dirpath, f) for f in files if f.lower().endswith(".edf"))
    return sorted(found)


def _preprocess_file(args):
    path, kwargs = args
    rec = read_edf(path, case_label=label_from_path(path))
    return preprocess_recording(rec, **kwargs)


def preprocess_directory(root, out_dir, workers=1, **kwargs):
    """Preprocess every EDF under ``root`` into a segment cache; returns the manifest path.

    Output is independent of ``workers``: files are processed in sorted order
    and results are collected in that order.
    """
    files = find_edf_files(root)
    if not files:
        raise DataError(f"no .edf files under {root}")
    jobs = [(f, kwargs) for f in files]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_preprocess_file, jobs))
    else:
        results = [_preprocess_file(j) for j in jobs]
    segments = [s for segs in results for s in segs]
    if not segments:
        raise DataError("no recording produced a full segment")
    return save_segments(segments, out_dir)
