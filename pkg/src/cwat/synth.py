"""Synthetic normal/abnormal EEG with known spectral signatures.

Normal recordings mix one sinusoid per frequency band on every channel, with
alpha strongest over the occipital electrodes.  Abnormal recordings suppress
alpha on O1/O2 and add bursts of 30 Hz beta on Fz.  Each two-minute block
draws fresh frequencies and phases, so segments of a case are not copies.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from cwat.edfio import MONTAGE_10_20, Channel, EegRecording, recording_to_edf
from cwat.errors import ConfigError
from cwat.preprocess import SEGMENT_SECONDS, preprocess_recording, save_segments

BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 45.0),
}
OCCIPITAL = ("O1", "O2")
BURST_CHANNEL = "Fz"
EDGE_HZ = 0.5  # sine frequencies keep this far from band edges so their power stays in-band


def _default_amplitudes():
    return {"delta": 10.0, "theta": 8.0, "alpha": 10.0, "beta": 5.0, "gamma": 2.0}


@dataclass(frozen=True)
class SynthSpec:
    n_cases: int = 20
    segments_per_case: int = 4
    channels: tuple = MONTAGE_10_20
    rate_hz: float = 100.0
    bands: dict = field(default_factory=lambda: dict(BANDS))
    amplitudes: dict = field(default_factory=_default_amplitudes)  # uV, every channel
    occipital_alpha: float = 30.0  # uV peak on O1/O2 in normal recordings
    alpha_wax_seconds: tuple = (4.0, 12.0)  # period range of the waxing/waning alpha envelope; () disables
    abnormal_alpha_factor: float = 0.1
    burst_amplitude: float = 60.0  # uV, 30 Hz on Fz
    burst_seconds: float = 5.0
    burst_period_seconds: float = 20.0
    noise_std: float = 5.0
    window_seconds: float = SEGMENT_SECONDS
    seed: int = 0

    def validate(self):
        if self.n_cases < 1 or self.segments_per_case < 1:
            raise ConfigError("n_cases and segments_per_case must be >= 1")
        nyquist = self.rate_hz / 2
        if set(self.amplitudes) - set(self.bands):
            raise ConfigError(f"amplitudes for unknown bands: {sorted(set(self.amplitudes) - set(self.bands))}")
        for name, (lo, hi) in self.bands.items():
            if not 0 < lo < hi < nyquist:
                raise ConfigError(f"band {name} ({lo}, {hi}) Hz must lie inside (0, {nyquist}) Hz")
            if hi - lo <= 2 * EDGE_HZ:
                raise ConfigError(f"band {name} ({lo}, {hi}) Hz is narrower than {2 * EDGE_HZ} Hz")
        if "alpha" not in self.bands:
            raise ConfigError("an alpha band is required")
        if 30.0 >= nyquist:
            raise ConfigError("the 30 Hz burst needs rate_hz > 60")
        values = list(self.amplitudes.values()) + [
            self.occipital_alpha, self.abnormal_alpha_factor, self.burst_amplitude, self.noise_std,
        ]
        if min(values) < 0:
            raise ConfigError("amplitudes and noise must be >= 0")
        for name in OCCIPITAL + (BURST_CHANNEL,):
            if name not in self.channels:
                raise ConfigError(f"channel {name} missing from the synthetic montage")
        return self


def case_label(spec, case_index):
    return case_index % 2  # alternate normal / abnormal


def case_ids(case_index):
    return f"case{case_index:04d}", f"subj{case_index:04d}"


def _block(spec, label, rng, n):
    """One window of ``n`` samples for every channel, in uV."""
    t = np.arange(n) / spec.rate_hz
    x = np.zeros((len(spec.channels), n))
    for ci, name in enumerate(spec.channels):
        for band, (lo, hi) in spec.bands.items():
            amp = spec.amplitudes.get(band, 0.0)
            envelope = 1.0
            if band == "alpha" and name in OCCIPITAL:
                amp = spec.occipital_alpha * (spec.abnormal_alpha_factor if label else 1.0)
                if spec.alpha_wax_seconds:
                    period = rng.uniform(*spec.alpha_wax_seconds)
                    envelope = 0.5 + 0.5 * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
            freq = rng.uniform(lo + EDGE_HZ, hi - EDGE_HZ)
            phase = rng.uniform(0, 2 * np.pi)
            if amp:
                x[ci] += amp * envelope * np.sin(2 * np.pi * freq * t + phase)
    if label:
        ci = spec.channels.index(BURST_CHANNEL)
        offset = rng.uniform(0, spec.burst_period_seconds)
        on = ((t + offset) % spec.burst_period_seconds) < spec.burst_seconds
        x[ci] += on * spec.burst_amplitude * np.sin(2 * np.pi * 30.0 * t + rng.uniform(0, 2 * np.pi))
    if spec.noise_std:
        x += rng.normal(0.0, spec.noise_std, size=x.shape)
    return x


def generate_recording(spec, case_index):
    """The full multi-window recording of one case."""
    spec.validate()
    label = case_label(spec, case_index)
    rng = np.random.default_rng((spec.seed, case_index))
    n = int(round(spec.window_seconds * spec.rate_hz))
    x = np.concatenate([_block(spec, label, rng, n) for _ in range(spec.segments_per_case)], axis=1)
    case_id, subject_id = case_ids(case_index)
    channels = [Channel(name, float(spec.rate_hz), x[i]) for i, name in enumerate(spec.channels)]
    return EegRecording(channels, subject_id=subject_id, case_id=case_id, case_label=label)


def generate_segments(spec):
    """Preprocessed (100 Hz, z-normalised) segments for every case."""
    out = []
    for i in range(spec.validate().n_cases):
        rec = generate_recording(spec, i)
        out += preprocess_recording(rec, window_seconds=spec.window_seconds, min_duration_seconds=None)
    return out


def write_segment_cache(spec, out_dir):
    return save_segments(generate_segments(spec), out_dir)


def write_edf_fixtures(spec, out_dir):
    """One EDF per case under ``out_dir/{normal,abnormal}/``; returns the file paths."""
    paths = []
    for i in range(spec.validate().n_cases):
        rec = generate_recording(spec, i)
        sub = os.path.join(out_dir, "abnormal" if rec.case_label else "normal")
        os.makedirs(sub, exist_ok=True)
        path = os.path.join(sub, f"{rec.case_id}.edf")
        with open(path, "wb") as fh:
            fh.write(recording_to_edf(rec, patient_id=rec.subject_id))
        paths.append(path)
    return paths


def band_powers(x, rate_hz, bands=None):
    """Mean periodogram power per band for each row of ``x``: ``(rows, n_bands)``."""
    bands = bands or BANDS
    x = np.atleast_2d(x)
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2 / x.shape[-1]
    freqs = np.fft.rfftfreq(x.shape[-1], d=1.0 / rate_hz)
    cols = []
    for lo, hi in bands.values():
        sel = (freqs >= lo) & (freqs < hi)
        cols.append(spec[:, sel].mean(axis=-1))
    return np.stack(cols, axis=-1)
