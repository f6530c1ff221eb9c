"""EDF / EDF+ reading (and a small writer for fixtures and round trips).

Only the fixed-width ASCII header, 16-bit little-endian data records and
EDF+ time-stamped annotation lists are handled. Every parse failure is an
``EdfParseError`` subclass carrying the byte offset where it was detected.
"""

from __future__ import annotations

import datetime as dt
import logging
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..signal_pipeline import MICROVOLTS, VOLTS, RawRecording

log = logging.getLogger(__name__)

ANNOTATION_LABEL = "EDF Annotations"
_FIXED = (("version", 8), ("patient", 80), ("recording", 80), ("startdate", 8), ("starttime", 8),
          ("header_bytes", 8), ("reserved", 44), ("n_records", 8), ("record_duration", 8),
          ("n_signals", 4))
_PER_SIGNAL = (("label", 16), ("transducer", 80), ("dimension", 8), ("physical_min", 8),
               ("physical_max", 8), ("digital_min", 8), ("digital_max", 8), ("prefilter", 80),
               ("samples_per_record", 8), ("reserved", 32))
_TO_MICROVOLTS = {"uv": 1.0, "µv": 1.0, "μv": 1.0, "mv": 1e3, "nv": 1e-3}


class EdfParseError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class EdfTruncatedError(EdfParseError):
    pass


class EdfFieldError(EdfParseError):
    """A header field that is not a number, or a number breaking the header's rules."""


class EdfHeaderSizeError(EdfParseError):
    pass


class EdfRecordSizeError(EdfParseError):
    pass


class EdfAnnotationError(EdfParseError):
    pass


class EdfUnsupportedError(EdfParseError):
    pass


@dataclass
class EdfSignalHeader:
    label: str
    dimension: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int
    prefilter: str = ""
    transducer: str = ""

    @property
    def is_annotation(self) -> bool:
        return self.label == ANNOTATION_LABEL

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        gain = (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)
        return (digital.astype(np.float64) - self.digital_min) * gain + self.physical_min


@dataclass
class EdfHeader:
    version: str
    patient: str
    recording: str
    start: Optional[dt.datetime]
    header_bytes: int
    n_records: int
    record_duration: float
    signals: list
    reserved: str = ""

    @property
    def edf_plus(self) -> bool:
        return self.reserved.startswith("EDF+")

    @property
    def record_bytes(self) -> int:
        return 2 * sum(s.samples_per_record for s in self.signals)


@dataclass
class Annotation:
    onset: float  # seconds from recording start
    duration: Optional[float]
    text: str


@dataclass
class EdfFile:
    header: EdfHeader
    digital: list  # per data signal, int16 samples
    annotations: list = field(default_factory=list)

    @property
    def data_signals(self) -> list:
        return [s for s in self.header.signals if not s.is_annotation]

    @property
    def sampling_rate(self) -> float:
        sig = self.data_signals
        if not sig:
            raise EdfUnsupportedError("no data signals", 256)
        return sig[0].samples_per_record / self.header.record_duration

    def to_recording(self) -> RawRecording:
        """Physical samples in microvolts (or volts when the file says V), events in samples."""
        sig = self.data_signals
        rates = {s.samples_per_record for s in sig}
        if len(rates) > 1:
            raise EdfUnsupportedError(f"signals use different sampling rates {sorted(rates)}",
                                      256 + 216 * len(self.header.signals))
        rows = []
        unit = MICROVOLTS
        for s, d in zip(sig, self.digital):
            x = s.to_physical(d)
            dim = s.dimension.strip().lower()
            if dim == "v":
                unit = VOLTS
            elif dim in _TO_MICROVOLTS:
                x = x * _TO_MICROVOLTS[dim]
            else:
                log.warning("signal %s has dimension %r; treating as microvolts", s.label, s.dimension)
            rows.append(x)
        if unit == VOLTS and any(s.dimension.strip().lower() != "v" for s in sig):
            raise EdfUnsupportedError("mixed volt and sub-volt dimensions", 256)
        fs = self.sampling_rate
        events = [(int(round(a.onset * fs)), a.text) for a in self.annotations]
        return RawRecording([s.label for s in sig], np.array(rows).reshape(len(sig), -1), fs, unit, events)


# parsing ---------------------------------------------------------------------------


def _ascii(buf: bytes, offset: int, width: int) -> str:
    return buf[offset:offset + width].decode("latin-1").strip()


def _number(text: str, name: str, offset: int, kind=float):
    try:
        return kind(text) if kind is float else int(text)
    except ValueError:
        raise EdfFieldError(f"header field {name} is not a number: {text!r}", offset) from None


def _start(date: str, time: str, offset: int) -> Optional[dt.datetime]:
    m1 = re.fullmatch(r"(\d\d)\.(\d\d)\.(\d\d)", date)
    m2 = re.fullmatch(r"(\d\d)\.(\d\d)\.(\d\d)", time)
    if not (m1 and m2):
        raise EdfFieldError(f"start date/time {date!r} {time!r} not dd.mm.yy hh.mm.ss", offset)
    d, mo, y = (int(g) for g in m1.groups())
    year = 1900 + y if y >= 85 else 2000 + y
    try:
        return dt.datetime(year, mo, d, *(int(g) for g in m2.groups()))
    except ValueError as e:
        raise EdfFieldError(f"invalid start date/time: {e}", offset) from None


def parse_header(buf: bytes) -> EdfHeader:
    if len(buf) < 256:
        raise EdfTruncatedError(f"file is {len(buf)} bytes, shorter than the 256-byte fixed header", len(buf))
    fixed, off = {}, 0
    offsets = {}
    for name, width in _FIXED:
        fixed[name] = _ascii(buf, off, width)
        offsets[name] = off
        off += width
    ns = _number(fixed["n_signals"], "number of signals", offsets["n_signals"], int)
    if ns < 1:
        raise EdfFieldError(f"number of signals must be positive, got {ns}", offsets["n_signals"])
    header_bytes = _number(fixed["header_bytes"], "header bytes", offsets["header_bytes"], int)
    if header_bytes != 256 + 256 * ns:
        raise EdfHeaderSizeError(
            f"header declares {header_bytes} bytes but {ns} signals need {256 + 256 * ns}",
            offsets["header_bytes"],
        )
    if len(buf) < header_bytes:
        raise EdfTruncatedError(f"signal headers need {header_bytes} bytes, file has {len(buf)}", len(buf))
    columns, field_offset = {}, {}
    for name, width in _PER_SIGNAL:
        field_offset[name] = off
        columns[name] = [_ascii(buf, off + i * width, width) for i in range(ns)]
        off += width * ns
    widths = dict(_PER_SIGNAL)
    signals = []
    for i in range(ns):
        def num(name, kind=float):
            return _number(columns[name][i], f"{name} of signal {i}", field_offset[name] + i * widths[name], kind)

        s = EdfSignalHeader(
            label=columns["label"][i],
            dimension=columns["dimension"][i],
            physical_min=num("physical_min"),
            physical_max=num("physical_max"),
            digital_min=num("digital_min", int),
            digital_max=num("digital_max", int),
            samples_per_record=num("samples_per_record", int),
            prefilter=columns["prefilter"][i],
            transducer=columns["transducer"][i],
        )
        if not s.digital_min < s.digital_max:
            raise EdfFieldError(f"signal {i} digital range [{s.digital_min}, {s.digital_max}] is empty",
                                field_offset["digital_min"] + i * 8)
        if s.physical_min == s.physical_max:
            raise EdfFieldError(f"signal {i} physical range is zero", field_offset["physical_min"] + i * 8)
        if s.samples_per_record < 1:
            raise EdfFieldError(f"signal {i} has {s.samples_per_record} samples per record",
                                field_offset["samples_per_record"] + i * 8)
        signals.append(s)
    duration = _number(fixed["record_duration"], "record duration", offsets["record_duration"])
    if not duration > 0:
        raise EdfFieldError(f"record duration must be positive, got {duration}", offsets["record_duration"])
    return EdfHeader(
        version=fixed["version"],
        patient=fixed["patient"],
        recording=fixed["recording"],
        start=_start(fixed["startdate"], fixed["starttime"], offsets["startdate"]),
        header_bytes=header_bytes,
        n_records=_number(fixed["n_records"], "number of records", offsets["n_records"], int),
        record_duration=duration,
        signals=signals,
        reserved=fixed["reserved"],
    )


_TAL_RE = re.compile(rb"([+-]\d+(?:\.\d*)?)(?:\x15(\d+(?:\.\d*)?))?\x14((?:[^\x00]*?\x14)*)")


def parse_tals(raw: bytes, base_offset: int = 0) -> list:
    """Annotations from one record's annotation bytes; time-keeping entries (no text) are dropped."""
    out = []
    pos = 0
    for chunk in raw.split(b"\x00"):
        if not chunk:
            pos += 1
            continue
        m = _TAL_RE.fullmatch(chunk)
        if m is None:
            raise EdfAnnotationError(f"malformed annotation list {chunk[:40]!r}", base_offset + pos)
        onset = float(m.group(1))
        duration = float(m.group(2)) if m.group(2) else None
        texts = m.group(3).split(b"\x14")[:-1] if m.group(3) else []
        for t in texts:
            if t:
                out.append(Annotation(onset, duration, t.decode("utf-8", errors="replace")))
        pos += len(chunk) + 1
    return out


def parse_edf(buf: bytes) -> EdfFile:
    header = parse_header(buf)
    rec_bytes = header.record_bytes
    body = len(buf) - header.header_bytes
    n = header.n_records
    if n == -1:
        if body % rec_bytes:
            raise EdfRecordSizeError(
                f"{body} data bytes are not a whole number of {rec_bytes}-byte records", header.header_bytes)
        n = body // rec_bytes
        header.n_records = n
    elif n < 0:
        raise EdfFieldError(f"number of records must be -1 or non-negative, got {n}", 236)
    elif body < n * rec_bytes:
        raise EdfTruncatedError(f"{n} records need {n * rec_bytes} data bytes, file has {body}",
                                header.header_bytes + body - body % rec_bytes if rec_bytes else len(buf))
    elif body > n * rec_bytes:
        raise EdfRecordSizeError(
            f"{body - n * rec_bytes} bytes after the last of {n} {rec_bytes}-byte records",
            header.header_bytes + n * rec_bytes)
    samples = np.frombuffer(buf, dtype="<i2", count=n * rec_bytes // 2, offset=header.header_bytes)
    samples = samples.reshape(n, rec_bytes // 2)
    digital, annotations = [], []
    col = 0
    for s in header.signals:
        block = samples[:, col:col + s.samples_per_record]
        if s.is_annotation:
            for r in range(n):
                raw = block[r].astype("<i2").tobytes()
                annotations += parse_tals(raw, header.header_bytes + r * rec_bytes + 2 * col)
        else:
            digital.append(block.reshape(-1).astype(np.int16))
        col += s.samples_per_record
    return EdfFile(header, digital, annotations)


def read_edf_file(path) -> EdfFile:
    with open(path, "rb") as f:
        return parse_edf(f.read())


def read_edf(path) -> RawRecording:
    return read_edf_file(path).to_recording()


# writing ---------------------------------------------------------------------------


def _field(value, width: int) -> bytes:
    text = value if isinstance(value, str) else _format_number(value)
    raw = text.encode("latin-1")
    if len(raw) > width:
        raise ValueError(f"{text!r} does not fit a {width}-character field")
    return raw.ljust(width, b" ")


def _format_number(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return s[:8]


def _tal(onset: float, text: Optional[str], duration: Optional[float] = None) -> bytes:
    head = f"{onset:+g}".encode()
    if duration is not None:
        head += b"\x15" + f"{duration:g}".encode()
    body = b"\x14" + (text.encode("utf-8") if text else b"") + b"\x14"
    return head + body + b"\x00"


def write_edf(
    path,
    labels: Sequence[str],
    digital: np.ndarray,
    samples_per_record: int,
    record_duration: float = 1.0,
    physical_range=(-1000.0, 1000.0),
    digital_range=(-32768, 32767),
    dimension: str = "uV",
    annotations: Sequence[Annotation] = (),
    patient: str = "X X X X",
    recording: str = "Startdate X X X X",
    start: dt.datetime = dt.datetime(2000, 1, 1),
) -> None:
    """Write digital samples (channels x samples, int16) as EDF, or EDF+C when annotations are given."""
    digital = np.asarray(digital)
    if digital.ndim != 2 or digital.shape[0] != len(labels):
        raise ValueError(f"digital samples {digital.shape} do not match {len(labels)} labels")
    if digital.shape[1] % samples_per_record:
        raise ValueError("sample count must be a whole number of records")
    n = digital.shape[1] // samples_per_record
    plus = bool(annotations)
    per_record = [[_tal(r * record_duration, None)] for r in range(n)]
    for a in annotations:
        r = min(max(int(a.onset // record_duration), 0), max(n - 1, 0))
        per_record[r].append(_tal(a.onset, a.text, a.duration))
    ann_bytes = max(sum(len(t) for t in tals) for tals in per_record) if plus else 0
    ann_samples = (ann_bytes + 1) // 2

    sig = [(lab, dimension, physical_range, digital_range, samples_per_record) for lab in labels]
    if plus:
        sig.append((ANNOTATION_LABEL, "", (-1, 1), (-32768, 32767), ann_samples))
    ns = len(sig)
    head = b"".join([
        _field("0", 8), _field(patient, 80), _field(recording, 80),
        _field(start.strftime("%d.%m.%y"), 8), _field(start.strftime("%H.%M.%S"), 8),
        _field(256 + 256 * ns, 8), _field("EDF+C" if plus else "", 44),
        _field(n, 8), _field(record_duration, 8), _field(ns, 4),
    ])
    cols = [
        [_field(s[0], 16) for s in sig], [_field("", 80) for _ in sig], [_field(s[1], 8) for s in sig],
        [_field(s[2][0], 8) for s in sig], [_field(s[2][1], 8) for s in sig],
        [_field(s[3][0], 8) for s in sig], [_field(s[3][1], 8) for s in sig],
        [_field("", 80) for _ in sig], [_field(s[4], 8) for s in sig], [_field("", 32) for _ in sig],
    ]
    head += b"".join(b"".join(c) for c in cols)
    body = bytearray()
    data = digital.astype("<i2")
    for r in range(n):
        body += data[:, r * samples_per_record:(r + 1) * samples_per_record].tobytes()
        if plus:
            body += b"".join(per_record[r]).ljust(2 * ann_samples, b"\x00")
    with open(path, "wb") as f:
        f.write(head + bytes(body))


def physical_to_digital(x: np.ndarray, physical_range=(-1000.0, 1000.0), digital_range=(-32768, 32767)):
    """Inverse of the physical scaling, rounded and clipped to the digital range."""
    pmin, pmax = physical_range
    dmin, dmax = digital_range
    d = np.rint((np.asarray(x, dtype=np.float64) - pmin) * (dmax - dmin) / (pmax - pmin) + dmin)
    return np.clip(d, dmin, dmax).astype(np.int16)
