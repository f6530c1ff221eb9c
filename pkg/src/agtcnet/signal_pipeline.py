"""Raw EEG to model-ready epochs: scaling, anti-aliased resampling, CAR, epoching.

Filtering is a single causal pass, so the anti-alias stage delays the
signal by the filter's group delay (a few samples at 125 Hz for the
order-12 design). No compensation is applied before epoching; every epoch
of a recording carries the same constant offset.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import signal as sps

log = logging.getLogger(__name__)

VOLTS = "volts"
MICROVOLTS = "microvolts"
RESAMPLE_THRESHOLD_HZ = 200.0
ANTI_ALIAS_ORDER = 12


@dataclass
class RawRecording:
    channel_labels: list[str]
    data: np.ndarray  # channels x samples
    sampling_rate: float
    unit: str = MICROVOLTS
    events: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"recording data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] != len(self.channel_labels):
            raise ValueError(
                f"{self.data.shape[0]} data rows but {len(self.channel_labels)} channel labels"
            )
        if not self.sampling_rate > 0:
            raise ValueError(f"sampling rate must be positive, got {self.sampling_rate}")
        if self.unit not in (VOLTS, MICROVOLTS):
            raise ValueError(f"unknown unit {self.unit!r}")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class EpochedTrial:
    data: np.ndarray  # channels x samples, microvolts
    sampling_rate: float
    label: int
    subject_id: str = "0"
    session_id: str = "0"
    run_id: str = "0"
    window_span: tuple[int, int] = (0, 0)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject_id, self.session_id, self.run_id)


@dataclass(frozen=True)
class SosFilter:
    """Cascade of biquads; each row is (b0, b1, b2, a1, a2) with a0 = 1."""

    sections: np.ndarray
    order: int
    cutoff_hz: float
    sampling_rate_hz: float

    def as_scipy(self) -> np.ndarray:
        s = self.sections
        return np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]])

    def frequency_response(self, freqs_hz) -> np.ndarray:
        z = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / self.sampling_rate_hz)
        h = np.ones_like(z)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * z + b2 * z * z) / (1 + a1 * z + a2 * z * z)
        return h

    def pole_radii(self) -> np.ndarray:
        radii = []
        for _, _, _, a1, a2 in self.sections:
            radii.extend(np.abs(np.roots([1.0, a1, a2])) if a2 != 0 else [abs(a1)])
        return np.asarray(radii)


def scale_to_microvolts(rec: RawRecording) -> RawRecording:
    if rec.unit == MICROVOLTS:
        return rec
    return replace(rec, data=rec.data * 1e6, unit=MICROVOLTS, events=list(rec.events))


def design_butterworth_lowpass(order: int, cutoff_hz: float, sampling_rate_hz: float) -> SosFilter:
    """Digital Butterworth low-pass via a prewarped bilinear transform.

    Sections are sorted by ascending pole Q; the real pole of an odd order
    comes first.
    """
    if order < 1:
        raise ValueError(f"filter order must be positive, got {order}")
    nyquist = sampling_rate_hz / 2.0
    if not 0 < cutoff_hz < nyquist:
        raise ValueError(f"invalid cutoff {cutoff_hz} Hz; must lie in (0, {nyquist}) Hz")

    k = 2.0 * sampling_rate_hz
    wc = k * math.tan(math.pi * cutoff_hz / sampling_rate_hz)
    sections = []
    if order % 2:
        d0 = k + wc
        sections.append((0.5, [wc / d0, wc / d0, 0.0, (wc - k) / d0, 0.0]))
    for m in range(order // 2):
        # analog pole pair at angle theta off the imaginary axis
        theta = math.pi * (2 * m + 1) / (2 * order)
        sigma = wc * math.sin(theta)  # -Re(p)
        q = 1.0 / (2.0 * math.sin(theta))
        d0 = k * k + 2 * sigma * k + wc * wc
        d1 = 2 * (wc * wc - k * k)
        d2 = k * k - 2 * sigma * k + wc * wc
        g = wc * wc / d0
        sections.append((q, [g, 2 * g, g, d1 / d0, d2 / d0]))
    sections.sort(key=lambda s: s[0])
    return SosFilter(
        sections=np.array([c for _, c in sections]),
        order=order,
        cutoff_hz=float(cutoff_hz),
        sampling_rate_hz=float(sampling_rate_hz),
    )


def apply_filter(filt: SosFilter, x) -> np.ndarray:
    """Causal single pass through the biquad cascade from zero state (last axis)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot filter an empty sequence")
    return sps.sosfilt(filt.as_scipy(), x, axis=-1)


def resampled_length(n: int, fs_old: float, fs_new: float) -> int:
    return int(round(n * fs_new / fs_old))


def fft_resample(x, fs_old: float, fs_new: float) -> np.ndarray:
    """Resample along the last axis by spectrum truncation or zero padding."""
    x = np.asarray(x, dtype=np.float64)
    if fs_old <= 0 or fs_new <= 0:
        raise ValueError("sampling rates must be positive")
    n = x.shape[-1]
    if n == 0:
        raise ValueError("cannot resample an empty sequence")
    m = resampled_length(n, fs_old, fs_new)
    if m == n:
        return x.copy()
    if m == 0:
        raise ValueError(f"resampling {n} samples by {fs_new}/{fs_old} leaves none")

    spec = np.fft.rfft(x, axis=-1)
    out = np.zeros(x.shape[:-1] + (m // 2 + 1,), dtype=complex)
    keep = min(n, m)
    nbins = keep // 2 + 1
    out[..., :nbins] = spec[..., :nbins]
    if keep % 2 == 0:
        if m < n:
            # the +/- new-Nyquist components fold onto one real bin
            out[..., keep // 2] *= 2.0
        else:
            # the old Nyquist bin is split between +N/2 and -N/2
            out[..., keep // 2] *= 0.5
    return np.fft.irfft(out, m, axis=-1) * (m / n)


def apply_car(data) -> np.ndarray:
    """Subtract the instantaneous mean over channels (rows)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("common average referencing needs at least 2 channels")
    return data - data.mean(axis=0, keepdims=True)


def preprocess(rec: RawRecording, target_fs: Optional[float] = None) -> RawRecording:
    """Scale to microvolts, optionally anti-alias and resample, then CAR."""
    rec = scale_to_microvolts(rec)
    data = rec.data
    fs = rec.sampling_rate
    events = list(rec.events)
    if target_fs is not None and rec.sampling_rate > RESAMPLE_THRESHOLD_HZ and target_fs != fs:
        filt = design_butterworth_lowpass(ANTI_ALIAS_ORDER, 0.5 * target_fs, fs)
        data = fft_resample(apply_filter(filt, data), fs, target_fs)
        ratio = target_fs / fs
        events = [(int(round(onset * ratio)), code) for onset, code in events]
        log.debug("resampled %s Hz -> %s Hz (%d samples)", fs, target_fs, data.shape[1])
        fs = float(target_fs)
    elif target_fs is not None and target_fs != fs:
        log.info("sampling rate %s Hz not above %s Hz; no resampling", fs, RESAMPLE_THRESHOLD_HZ)
    return RawRecording(
        channel_labels=list(rec.channel_labels),
        data=apply_car(data),
        sampling_rate=fs,
        unit=MICROVOLTS,
        events=events,
    )


def epoch_length(t_start: float, t_end: float, fs: float) -> int:
    return int(round((t_end - t_start) * fs))


@dataclass
class EpochingReport:
    trials: list[EpochedTrial]
    skipped: list[tuple[int, str, str]]  # (onset, code, reason)


def extract_epochs(
    rec: RawRecording,
    t_start: float,
    t_end: float,
    label_map: Mapping[str, int],
    subject_id: str = "0",
    session_id: str = "0",
    run_id: str = "0",
) -> EpochingReport:
    """Cut one epoch per mapped event; out-of-range windows are skipped and reported."""
    if not t_start < t_end:
        raise ValueError(f"timeframe start {t_start} must precede end {t_end}")
    fs = rec.sampling_rate
    length = epoch_length(t_start, t_end, fs)
    offset = int(round(t_start * fs))
    trials, skipped = [], []
    for onset, code in rec.events:
        if code not in label_map:
            continue
        start = onset + offset
        stop = start + length
        if start < 0 or stop > rec.n_samples:
            skipped.append((onset, code, f"window [{start}, {stop}) outside [0, {rec.n_samples})"))
            continue
        trials.append(
            EpochedTrial(
                data=rec.data[:, start:stop].copy(),
                sampling_rate=fs,
                label=int(label_map[code]),
                subject_id=subject_id,
                session_id=session_id,
                run_id=run_id,
                window_span=(start, stop),
            )
        )
    if skipped:
        log.warning("skipped %d out-of-range epochs", len(skipped))
    return EpochingReport(trials, skipped)


def stack_trials(trials: Sequence[EpochedTrial]) -> tuple[np.ndarray, np.ndarray]:
    """Trials as a (N, C, T, 1) batch plus an int label vector."""
    x = np.stack([t.data for t in trials])[..., None]
    y = np.array([t.label for t in trials], dtype=np.int64)
    return x, y
