"""Parameters, constraints, initializers and seeded random streams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .tensor import Tensor


class RngStream:
    """Seeded stream of float64 draws with a replayable position.

    Every draw consumes exactly one 64-bit PCG64 output per double, so a
    stream rebuilt as ``RngStream(seed, counter)`` continues with the same
    values the original would have produced next.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed)
        self.counter = 0
        bitgen = np.random.PCG64(np.random.SeedSequence(self.seed))
        if counter:
            bitgen.advance(int(counter))
            self.counter = int(counter)
        self._gen = np.random.Generator(bitgen)

    def random(self, shape=()) -> np.ndarray:
        out = self._gen.random(shape)
        self.counter += int(np.prod(shape, dtype=np.int64))
        return out

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[step] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def substream(self, *keys: Union[int, str]) -> "RngStream":
        """Independent stream derived from (seed, keys); parent is untouched."""
        words = [self.seed & 0xFFFFFFFFFFFFFFFF]
        for k in keys:
            words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
        state = np.random.SeedSequence(words).generate_state(2, np.uint64)
        return RngStream(int(state[0]) >> 1)


@dataclass(frozen=True)
class MaxNorm:
    """Rescale slices so the norm taken over ``axis`` is at most ``limit``."""

    limit: float
    axis: int = 0

    def project(self, w: np.ndarray) -> np.ndarray:
        norms = np.sqrt((w * w).sum(axis=self.axis, keepdims=True))
        factor = np.where(norms > self.limit, self.limit / np.where(norms > 0, norms, 1.0), 1.0)
        return w * factor

    def holds(self, w: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(np.sqrt((w * w).sum(axis=self.axis)) <= self.limit * (1 + tol)))


@dataclass(frozen=True)
class MinMax:
    lo: float
    hi: float

    def project(self, w: np.ndarray) -> np.ndarray:
        return np.clip(w, self.lo, self.hi)

    def holds(self, w: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all((w >= self.lo - tol) & (w <= self.hi + tol)))


Constraint = Union[MaxNorm, MinMax]


@dataclass
class LayerParam:
    name: str
    tensor: Tensor
    constraint: Optional[Constraint] = field(default=None)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    @property
    def size(self) -> int:
        return self.tensor.size


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: RngStream) -> Tensor:
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("glorot_uniform needs positive fans")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, tuple(shape)), requires_grad=True)


def kernel_fans(shape) -> tuple[int, int]:
    """Fan-in/fan-out the way conv and dense kernels are usually counted."""
    if len(shape) == 2:
        return shape[0], shape[1]
    receptive = int(np.prod(shape[:-2]))
    return shape[-2] * receptive, shape[-1] * receptive


def apply_constraints(params: Iterable[LayerParam]) -> None:
    for p in params:
        if p.constraint is not None:
            p.tensor.data = p.constraint.project(p.tensor.data)
