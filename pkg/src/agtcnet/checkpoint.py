"""Binary weights file.

Layout (little-endian throughout)::

    b"AGTC"  u16 version
    u16 n_int    n_int x u32      integer config fields, declaration order
    u16 n_float  n_float x f64    dropout rates, declaration order
    u16 n_labels n_labels x (u16 len, utf-8)   electrode labels
    u32 n_records
    n_records x (u16 name_len, name, u8 rank, rank x u32 dims, f64 payload)

Trainable tensors, BN moving statistics (``<site>.moving_mean`` /
``<site>.moving_var``) and the adjacency (``graph.adjacency``) are all
stored as records.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from typing import Optional

import numpy as np

from .autodiff import BatchNormState, LayerParam, Tensor
from .electrode_graph import graph_from_matrix
from .model import ModelConfig, ModelState, parameter_layout

MAGIC = b"AGTC"
VERSION = 1
ADJACENCY = "graph.adjacency"


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic, unsupported version, or a truncated/garbled file."""


class NameMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    def __init__(self, mismatches: dict):
        self.mismatches = mismatches
        detail = ", ".join(f"{n}: file {a} vs model {b}" for n, (a, b) in mismatches.items())
        super().__init__(f"tensor shape mismatch: {detail}")


def _records(m: ModelState):
    for name, p in m.params.items():
        yield name, p.tensor.data
    for site, st in m.bn.items():
        yield f"{site}.moving_mean", st.moving_mean
        yield f"{site}.moving_var", st.moving_var
    yield ADJACENCY, np.asarray(m.adjacency.matrix, dtype=np.float64)


def encode(m: ModelState) -> bytes:
    cfg = m.config
    ints = [getattr(cfg, f) for f in ModelConfig.int_fields()]
    floats = [getattr(cfg, f) for f in ModelConfig.float_fields()]
    out = [MAGIC, struct.pack("<H", VERSION)]
    out.append(struct.pack(f"<H{len(ints)}I", len(ints), *ints))
    out.append(struct.pack(f"<H{len(floats)}d", len(floats), *floats))
    labels = [str(l).encode("utf-8") for l in m.adjacency.labels]
    out.append(struct.pack("<H", len(labels)))
    for lb in labels:
        out.append(struct.pack("<H", len(lb)) + lb)
    records = list(_records(m))
    out.append(struct.pack("<I", len(records)))
    for name, arr in records:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_weights(m: ModelState, path) -> None:
    """Write atomically: a crash never leaves a half-written file at ``path``."""
    data = encode(m)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".agtc-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointFormatError(f"file truncated at byte {self.pos}")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"file truncated at byte {self.pos}")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b


def decode(buf: bytes):
    """Parse a weights file into (config, labels, {name: array}) without touching any model."""
    r = _Reader(buf)
    if r.raw(4) != MAGIC:
        raise CheckpointFormatError("not a weights file (bad magic)")
    (version,) = r.take("<H")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported weights format version {version}")
    (n_int,) = r.take("<H")
    ints = r.take(f"<{n_int}I")
    (n_float,) = r.take("<H")
    floats = r.take(f"<{n_float}d")
    int_names, float_names = ModelConfig.int_fields(), ModelConfig.float_fields()
    if n_int != len(int_names) or n_float != len(float_names):
        raise CheckpointFormatError(
            f"config block has {n_int} ints/{n_float} floats, expected "
            f"{len(int_names)}/{len(float_names)}"
        )
    try:
        cfg = ModelConfig(**dict(zip(int_names, ints)), **dict(zip(float_names, floats)))
    except ValueError as e:
        raise CheckpointFormatError(f"invalid stored config: {e}") from e
    (n_labels,) = r.take("<H")
    labels = []
    for _ in range(n_labels):
        (n,) = r.take("<H")
        labels.append(r.raw(n).decode("utf-8"))
    (n_records,) = r.take("<I")
    tensors = {}
    for _ in range(n_records):
        (n,) = r.take("<H")
        name = r.raw(n).decode("utf-8")
        (rank,) = r.take("<B")
        dims = r.take(f"<{rank}I")
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.raw(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes after last record")
    return cfg, labels, tensors


def _expected_shapes(cfg: ModelConfig) -> dict:
    specs, sites = parameter_layout(cfg)
    shapes = {name: tuple(shape) for name, shape, _, _ in specs}
    for site, n in sites:
        shapes[f"{site}.moving_mean"] = (n,)
        shapes[f"{site}.moving_var"] = (n,)
    shapes[ADJACENCY] = (cfg.num_channels, cfg.num_channels)
    return shapes


def load_weights(path, config: Optional[ModelConfig] = None) -> ModelState:
    """Rebuild a ModelState from ``path``.

    If ``config`` is given the file must fit it exactly (same tensor names
    and shapes); dropout rates may differ and are taken from ``config``.
    """
    with open(path, "rb") as f:
        buf = f.read()
    stored, labels, tensors = decode(buf)
    cfg = config or stored
    expected = _expected_shapes(cfg)
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise NameMismatchError(f"tensor names differ: missing {missing}, unexpected {extra}")
    bad = {n: (tensors[n].shape, expected[n]) for n in expected if tensors[n].shape != expected[n]}
    if bad:
        raise ShapeMismatchError(bad)

    try:
        graph = graph_from_matrix(labels, tensors[ADJACENCY])
    except ValueError as e:
        raise CheckpointFormatError(f"stored adjacency invalid: {e}") from e
    specs, sites = parameter_layout(cfg)
    params = {}
    for name, _, _, constraint in specs:
        t = Tensor(tensors[name].copy(), requires_grad=True, name=name)
        params[name] = LayerParam(name, t, constraint)
    bn = {}
    for site, n in sites:
        st = BatchNormState(n)
        st.moving_mean = tensors[f"{site}.moving_mean"].copy()
        st.moving_var = tensors[f"{site}.moving_var"].copy()
        bn[site] = st
    return ModelState(cfg, params, bn, graph)


def file_digest(path) -> str:
    """Git-style blob SHA-1 of a file, used to tag reports with the weights they came from."""
    with open(path, "rb") as f:
        data = f.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
