"""Binary checkpoint: config snapshot text plus named sections of named float64 tensors.

Layout (little-endian)::

    b"CWCK" | u16 version | u32 n | n bytes UTF-8 config text | u16 sections
    per section: u16 n + name | u32 tensors
    per tensor:  u16 n + name | u8 ndim | ndim x u32 dims | float64 data

Sections are written in the order given and tensors in insertion order, so
identical inputs give identical bytes.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from cwat.errors import DataError

MAGIC = b"CWCK"
VERSION = 1


class CheckpointError(DataError):
    pass


def _name(text):
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_checkpoint(config_text, sections):
    out = [MAGIC, struct.pack("<H", VERSION)]
    raw = config_text.encode("utf-8")
    out += [struct.pack("<I", len(raw)), raw, struct.pack("<H", len(sections))]
    for section, tensors in sections.items():
        out += [_name(section), struct.pack("<I", len(tensors))]
        for name, value in tensors.items():
            arr = np.asarray(getattr(value, "data", value), dtype="<f8")
            out += [_name(name), struct.pack("<B", arr.ndim)]
            out += [struct.pack(f"<{arr.ndim}I", *arr.shape), np.ascontiguousarray(arr).tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, n):
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"invalid UTF-8 near byte {self.pos}") from None


def decode_checkpoint(data):
    """Return ``(config_text, {section: OrderedDict(name -> ndarray)})``."""
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    config_text = r.text(n)
    (n_sections,) = r.unpack("<H")
    sections = OrderedDict()
    for _ in range(n_sections):
        section = r.text(r.unpack("<H")[0])
        (count,) = r.unpack("<I")
        tensors = OrderedDict()
        for _ in range(count):
            name = r.text(r.unpack("<H")[0])
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        sections[section] = tensors
    if r.pos != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.pos} trailing bytes after last section")
    return config_text, sections


def write_checkpoint(path, config_text, sections):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(config_text, sections))


def read_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode_checkpoint(data)
