"""Single-trial binary container ("EEGT").

Layout, all little-endian::

    magic      4 bytes  b"EEGT"
    version    u16      1
    channels   u32
    samples    u32
    fs         f64      sampling rate in Hz
    label      u32
    payload    channels * samples f64, row-major (channel by channel)

Datasets in formats this package does not parse (GDF and friends) are
converted to one container per trial by the user.
"""

from __future__ import annotations

import struct

import numpy as np

from ..signal_pipeline import EpochedTrial

MAGIC = b"EEGT"
VERSION = 1
_HEAD = struct.Struct("<4sHIIdI")


class ContainerError(ValueError):
    pass


def encode_trial(data: np.ndarray, sampling_rate: float, label: int) -> bytes:
    data = np.asarray(data, dtype="<f8")
    if data.ndim != 2:
        raise ValueError(f"trial data must be channels x samples, got {data.shape}")
    if label < 0:
        raise ValueError("label must be non-negative")
    c, t = data.shape
    return _HEAD.pack(MAGIC, VERSION, c, t, float(sampling_rate), int(label)) + data.tobytes(order="C")


def write_trial(path, data: np.ndarray, sampling_rate: float, label: int) -> None:
    with open(path, "wb") as f:
        f.write(encode_trial(data, sampling_rate, label))


def decode_trial(buf: bytes):
    """(data, sampling_rate, label) from container bytes."""
    if len(buf) < _HEAD.size:
        raise ContainerError(f"{len(buf)} bytes is shorter than the {_HEAD.size}-byte header")
    magic, version, c, t, fs, label = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    expected = 8 * c * t
    got = len(buf) - _HEAD.size
    if got != expected:
        raise ContainerError(f"payload is {got} bytes; {c} channels x {t} samples need {expected}")
    if not fs > 0:
        raise ContainerError(f"sampling rate must be positive, got {fs}")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEAD.size).reshape(c, t).astype(np.float64)
    return data, fs, label


def read_trial(path, subject="0", session="0", run="0", window_span=None) -> EpochedTrial:
    with open(path, "rb") as f:
        try:
            data, fs, label = decode_trial(f.read())
        except ContainerError as e:
            raise ContainerError(f"{path}: {e}") from None
    span = tuple(window_span) if window_span is not None else (0, data.shape[1])
    return EpochedTrial(data, fs, int(label), str(subject), str(session), str(run), span)
