"""European Data Format (EDF) reader, fixture writer and 10-20 montage selection.

Layout: a 256-byte main header, ``n_signals`` x 256 bytes of signal headers
stored field-major (all labels, then all transducers, ...), then data records
of little-endian int16 samples, signal by signal within each record.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from cwat.errors import DataError, EdfParseError, MissingChannelError

log = logging.getLogger(__name__)

MONTAGE_10_20 = (
    "Fp1", "Fp2", "F3", "F4", "F7", "F8", "C3", "C4", "T7", "T8",
    "P3", "P4", "P7", "P8", "O1", "O2", "Fz", "Cz", "Pz",
)

# older 10-20 names used by many clinical systems (including TUH)
LEGACY_NAMES = {"T7": "T3", "T8": "T4", "P7": "T5", "P8": "T6"}

ANNOTATION_LABELS = {"EDF ANNOTATIONS", "EDF+ ANNOTATIONS"}

# (name, width) of the main header fields, in file order
MAIN_FIELDS = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
)

SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


@dataclass
class EdfHeader:
    version: str = "0"
    patient_id: str = ""
    recording_id: str = ""
    start_date: str = "01.01.01"
    start_time: str = "00.00.00"
    header_bytes: int = 256
    reserved: str = ""
    n_records: int = -1
    record_duration: float = 1.0
    n_signals: int = 0


@dataclass
class SignalHeader:
    label: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int
    transducer: str = ""
    physical_dimension: str = "uV"
    prefiltering: str = ""
    reserved: str = ""


class EdfContents(NamedTuple):
    header: EdfHeader
    signals: list
    digital: list  # one int16 array per signal, all records concatenated


@dataclass
class Channel:
    label: str
    rate_hz: float
    samples: np.ndarray


@dataclass
class EegRecording:
    channels: list
    subject_id: str = ""
    case_id: str = ""
    case_label: int | None = None  # 0 normal, 1 abnormal
    clamped_samples: int = 0

    @property
    def labels(self):
        return [c.label for c in self.channels]

    @property
    def rate_hz(self):
        rates = {c.rate_hz for c in self.channels}
        if len(rates) != 1:
            raise DataError(f"channels have differing sampling rates: {sorted(rates)}")
        return rates.pop()

    @property
    def duration_seconds(self):
        if not self.channels:
            return 0.0
        return min(len(c.samples) / c.rate_hz for c in self.channels)

    def as_array(self):
        """Stack channels into a ``(C, T)`` array truncated to the shortest channel."""
        n = min(len(c.samples) for c in self.channels)
        return np.stack([c.samples[:n] for c in self.channels])


# ---------------------------------------------------------------- parsing


def _text(data, offset, width):
    return data[offset:offset + width].decode("latin-1").rstrip(" ")


def _number(data, offset, width, kind, what):
    raw = _text(data, offset, width).strip()
    try:
        return kind(raw)
    except ValueError:
        if kind is int:
            try:
                value = float(raw)
            except ValueError:
                value = None
            if value is not None and value.is_integer():
                return int(value)
        raise EdfParseError(f"non-numeric {what} field {raw!r}", offset) from None


def parse_edf(data):
    """Decode an EDF byte string into headers and raw digital samples."""
    data = bytes(data)
    if len(data) < 256:
        raise EdfParseError("truncated header", len(data))

    offsets = {}
    header = EdfHeader(
        version=_text(data, 0, 8),
        patient_id=_text(data, 8, 80),
        recording_id=_text(data, 88, 80),
        start_date=_text(data, 168, 8),
        start_time=_text(data, 176, 8),
        header_bytes=_number(data, 184, 8, int, "header_bytes"),
        reserved=_text(data, 192, 44),
        n_records=_number(data, 236, 8, int, "n_records"),
        record_duration=_number(data, 244, 8, float, "record_duration"),
        n_signals=_number(data, 252, 4, int, "n_signals"),
    )
    ns = header.n_signals
    if ns < 1:
        raise EdfParseError(f"n_signals must be >= 1, got {ns}", 252)
    if header.header_bytes != 256 + 256 * ns:
        raise EdfParseError(
            f"header_bytes {header.header_bytes} inconsistent with {ns} signals (expected {256 + 256 * ns})", 184
        )
    if header.n_records < -1:
        raise EdfParseError(f"invalid n_records {header.n_records}", 236)
    if header.record_duration <= 0 and header.n_records != 0:
        raise EdfParseError(f"record_duration must be positive, got {header.record_duration}", 244)
    if len(data) < header.header_bytes:
        raise EdfParseError("truncated signal headers", len(data))

    kinds = {
        "physical_min": float, "physical_max": float,
        "digital_min": int, "digital_max": int, "samples_per_record": int,
    }
    columns = {}
    pos = 256
    for name, width in SIGNAL_FIELDS:
        if name in kinds:
            columns[name] = [
                _number(data, pos + i * width, width, kinds[name], name) for i in range(ns)
            ]
        else:
            columns[name] = [_text(data, pos + i * width, width) for i in range(ns)]
        offsets[name] = pos
        pos += width * ns

    signals = []
    for i in range(ns):
        sh = SignalHeader(**{name: columns[name][i] for name, _ in SIGNAL_FIELDS})
        if sh.digital_min >= sh.digital_max:
            raise EdfParseError(
                f"signal {i} digital_min {sh.digital_min} >= digital_max {sh.digital_max}",
                offsets["digital_min"] + i * 8,
            )
        if sh.physical_min == sh.physical_max:
            raise EdfParseError(f"signal {i} physical_min == physical_max", offsets["physical_min"] + i * 8)
        if sh.samples_per_record < 1:
            raise EdfParseError(f"signal {i} samples_per_record < 1", offsets["samples_per_record"] + i * 8)
        signals.append(sh)

    per_record = sum(s.samples_per_record for s in signals)
    record_bytes = 2 * per_record
    available = len(data) - header.header_bytes
    if header.n_records == -1:
        if available % record_bytes:
            raise EdfParseError("data section is not a whole number of records", len(data))
        n_records = available // record_bytes
    else:
        n_records = header.n_records
        needed = n_records * record_bytes
        if available < needed:
            complete = available // record_bytes
            raise EdfParseError(
                f"truncated data: {n_records} records declared, {complete} present",
                header.header_bytes + complete * record_bytes,
            )

    raw = np.frombuffer(data, dtype="<i2", count=n_records * per_record, offset=header.header_bytes)
    raw = raw.reshape(n_records, per_record)
    digital = []
    start = 0
    for s in signals:
        digital.append(raw[:, start:start + s.samples_per_record].reshape(-1).astype(np.int16))
        start += s.samples_per_record
    return EdfContents(header, signals, digital)


def to_physical(digital, sh):
    """Calibrate digital samples to physical units, clamping to the digital range."""
    d = np.clip(np.asarray(digital, dtype=np.float64), sh.digital_min, sh.digital_max)
    scale = (sh.physical_max - sh.physical_min) / (sh.digital_max - sh.digital_min)
    out = sh.physical_min + (d - sh.digital_min) * scale
    # pin endpoints so the extremes map exactly
    out[d == sh.digital_min] = sh.physical_min
    out[d == sh.digital_max] = sh.physical_max
    return out


def count_out_of_range(digital, sh):
    d = np.asarray(digital)
    return int(np.count_nonzero((d < sh.digital_min) | (d > sh.digital_max)))


def is_annotation(label):
    return label.strip().upper() in ANNOTATION_LABELS


def read_edf(source, subject_id=None, case_id=None, case_label=None):
    """Parse a file path or byte string into an :class:`EegRecording` in physical units.

    EDF+ annotation signals are skipped.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
        stem = os.path.splitext(os.path.basename(os.fspath(source)))[0]
    else:
        data = bytes(source)
        stem = ""
    contents = parse_edf(data)
    hdr = contents.header
    channels = []
    clamped = 0
    for sh, dig in zip(contents.signals, contents.digital):
        if is_annotation(sh.label):
            continue
        clamped += count_out_of_range(dig, sh)
        channels.append(Channel(sh.label, sh.samples_per_record / hdr.record_duration, to_physical(dig, sh)))
    if clamped:
        log.warning("%s: clamped %d out-of-range samples", stem or "<bytes>", clamped)
    return EegRecording(
        channels=channels,
        subject_id=subject_id if subject_id is not None else (hdr.patient_id.split(" ")[0] or stem),
        case_id=case_id if case_id is not None else stem,
        case_label=case_label,
        clamped_samples=clamped,
    )


# ---------------------------------------------------------------- montage


def normalize_label(label):
    """``"EEG FP1-REF"`` -> ``"FP1"``."""
    name = label.strip().upper()
    if name.startswith("EEG "):
        name = name[4:].strip()
    for suffix in ("-REF", "-LE"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name.strip()


def select_montage(rec, wanted=MONTAGE_10_20):
    """Pick ``wanted`` channels in order, renaming them to the wanted spelling.

    Matching is case-insensitive and ignores ``EEG`` prefixes and ``-REF``/``-LE``
    suffixes; legacy names (T3/T4/T5/T6) are accepted when the modern name is
    absent.
    """
    by_name = {}
    for ch in rec.channels:
        by_name.setdefault(normalize_label(ch.label), ch)
    chosen, missing = [], []
    for name in wanted:
        key = name.upper()
        ch = by_name.get(key)
        if ch is None and name in LEGACY_NAMES:
            ch = by_name.get(LEGACY_NAMES[name])
        if ch is None:
            missing.append(name)
        else:
            chosen.append(Channel(name, ch.rate_hz, ch.samples))
    if missing:
        raise MissingChannelError(missing)
    rates = {c.rate_hz for c in chosen}
    if len(rates) > 1:
        raise DataError(f"selected channels have differing sampling rates: {sorted(rates)}")
    return dataclasses.replace(rec, channels=chosen)


# ---------------------------------------------------------------- writing (fixtures only)


def _fmt_number(value, width):
    if isinstance(value, (int, np.integer)) or float(value).is_integer():
        text = str(int(value))
        if len(text) <= width:
            return text
    for precision in range(width, 0, -1):
        text = f"{float(value):.{precision}g}"
        if len(text) <= width:
            return text
    raise ValueError(f"{value} does not fit in {width} characters")


def _field(value, width):
    text = value if isinstance(value, str) else _fmt_number(value, width)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"field {text!r} longer than {width} bytes")
    return raw.ljust(width, b" ")


def write_edf(header, signals, digital):
    """Serialise headers and digital samples; the inverse of :func:`parse_edf`."""
    ns = len(signals)
    spr = [s.samples_per_record for s in signals]
    lengths = {len(d) // r for d, r in zip(digital, spr)}
    if any(len(d) % r for d, r in zip(digital, spr)) or len(lengths) != 1:
        raise ValueError("every signal must hold the same whole number of records")
    n_records = lengths.pop()
    declared = header.n_records if header.n_records == -1 else n_records
    parts = [
        _field(header.version, 8),
        _field(header.patient_id, 80),
        _field(header.recording_id, 80),
        _field(header.start_date, 8),
        _field(header.start_time, 8),
        _field(256 + 256 * ns, 8),
        _field(header.reserved, 44),
        _field(declared, 8),
        _field(header.record_duration, 8),
        _field(ns, 4),
    ]
    for name, width in SIGNAL_FIELDS:
        parts.extend(_field(getattr(s, name), width) for s in signals)
    blocks = [np.asarray(d, dtype="<i2").reshape(n_records, r) for d, r in zip(digital, spr)]
    body = np.concatenate(blocks, axis=1) if blocks else np.zeros((0, 0), "<i2")
    parts.append(np.ascontiguousarray(body, dtype="<i2").tobytes())
    return b"".join(parts)


def recording_to_edf(rec, record_duration=1.0, patient_id=None):
    """Quantise a physical-unit recording to 16 bits and serialise it as EDF."""
    signals, digital = [], []
    n_records = None
    for ch in rec.channels:
        spr = ch.rate_hz * record_duration
        if not float(spr).is_integer():
            raise ValueError(f"rate {ch.rate_hz} Hz gives non-integer samples per {record_duration}s record")
        spr = int(spr)
        usable = len(ch.samples) // spr
        n_records = usable if n_records is None else min(n_records, usable)
        signals.append(spr)
    phys = []
    for ch, spr in zip(rec.channels, signals):
        x = np.asarray(ch.samples[: n_records * spr], dtype=np.float64)
        peak = float(np.max(np.abs(x))) if x.size else 1.0
        bound = float(_fmt_number(max(peak, 1e-3) * 1.001, 8))
        sh = SignalHeader(
            label=ch.label, physical_min=-bound, physical_max=bound,
            digital_min=-32768, digital_max=32767, samples_per_record=spr,
        )
        d = sh.digital_min + (x - sh.physical_min) * (sh.digital_max - sh.digital_min) / (
            sh.physical_max - sh.physical_min
        )
        digital.append(np.clip(np.round(d), -32768, 32767).astype(np.int16))
        phys.append(sh)
    header = EdfHeader(
        patient_id=patient_id if patient_id is not None else (rec.subject_id or "X"),
        recording_id=rec.case_id or "X",
        n_records=n_records,
        record_duration=record_duration,
        n_signals=len(phys),
    )
    return write_edf(header, phys, digital)


__all__ = [
    "ANNOTATION_LABELS",
    "Channel",
    "EdfContents",
    "EdfHeader",
    "EegRecording",
    "LEGACY_NAMES",
    "MONTAGE_10_20",
    "SignalHeader",
    "count_out_of_range",
    "normalize_label",
    "parse_edf",
    "read_edf",
    "recording_to_edf",
    "select_montage",
    "to_physical",
    "write_edf",
]
