"""Static channel adjacency from 10-20/10-10 electrode labels.

Channels are placed on a lattice of letter rows (anteroposterior) and
lateral index columns (mediolateral). Each channel links to its nearest
present neighbour along its row and along its column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

ROW_ORDER = ("Fp", "AF", "F", "FC", "C", "CP", "P", "PO", "O", "Iz")

# label prefix (upper-cased) -> (lattice row, canonical spelling)
_PREFIXES = {
    "FP": ("Fp", "Fp"),
    "AF": ("AF", "AF"),
    "FT": ("FC", "FT"),
    "FC": ("FC", "FC"),
    "TP": ("CP", "TP"),
    "CP": ("CP", "CP"),
    "PO": ("PO", "PO"),
    "F": ("F", "F"),
    "C": ("C", "C"),
    "T": ("C", "T"),
    "P": ("P", "P"),
    "O": ("O", "O"),
    "I": ("Iz", "I"),
}
_LABEL_RE = re.compile(r"^([A-Za-z]+?)(z|Z|[1-9][0-9]*)$")


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class ElectrodeLabel:
    row: str
    lateral_index: int
    prefix: str  # as written in 10-10 naming, e.g. "T" for T7 even though it sits on row C
    raw: str = field(default="", compare=False)

    def format(self) -> str:
        suffix = "z" if self.lateral_index == 0 else str(abs(self.lateral_index))
        return self.prefix + suffix

    @property
    def row_rank(self) -> int:
        return ROW_ORDER.index(self.row)

    def __str__(self):
        return self.raw or self.format()


def parse_label(s: str) -> ElectrodeLabel:
    """Parse names like 'Cz', 'CP4', 'FT7', or EEGMMIDB-style 'Fc5.'."""
    if not s or not s.strip():
        raise LabelError("empty electrode label")
    token = s.strip().rstrip(".")
    m = _LABEL_RE.match(token)
    if not m:
        raise LabelError(f"unrecognized electrode label {s!r}")
    prefix, suffix = m.group(1), m.group(2)
    if prefix.upper() not in _PREFIXES:
        raise LabelError(f"unrecognized electrode prefix {prefix!r} in {s!r}")
    row, canonical = _PREFIXES[prefix.upper()]
    if suffix in ("z", "Z"):
        index = 0
    else:
        n = int(suffix)
        index = -n if n % 2 else n
    return ElectrodeLabel(row=row, lateral_index=index, prefix=canonical, raw=s)


@dataclass(frozen=True)
class AdjacencyGraph:
    labels: tuple
    matrix: np.ndarray

    @property
    def names(self) -> list[str]:
        return [str(l) for l in self.labels]

    def index(self, name: str) -> int:
        target = parse_label(name)
        for i, l in enumerate(self.labels):
            if l == target:
                return i
        raise KeyError(name)

    def neighbors(self, name: str) -> set[str]:
        i = self.index(name)
        return {str(self.labels[j]) for j in np.flatnonzero(self.matrix[i])}

    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.matrix, 1))
        return list(zip(rows.tolist(), cols.tolist()))

    @property
    def n_edges(self) -> int:
        return int(np.triu(self.matrix, 1).sum())


def _chain(matrix, members):
    for a, b in zip(members, members[1:]):
        matrix[a, b] = matrix[b, a] = 1


def build_adjacency(labels: Sequence[str]) -> AdjacencyGraph:
    parsed = [parse_label(s) for s in labels]
    seen = {}
    for raw, p in zip(labels, parsed):
        if p in seen:
            raise LabelError(f"duplicate electrode {raw!r} (same position as {seen[p]!r})")
        seen[p] = raw

    n = len(parsed)
    a = np.zeros((n, n), dtype=np.int8)
    rows, cols = {}, {}
    for i, p in enumerate(parsed):
        rows.setdefault(p.row, []).append(i)
        cols.setdefault(p.lateral_index, []).append(i)
    for members in rows.values():
        _chain(a, sorted(members, key=lambda i: parsed[i].lateral_index))
    for members in cols.values():
        _chain(a, sorted(members, key=lambda i: parsed[i].row_rank))
    return AdjacencyGraph(labels=tuple(parsed), matrix=a)


@dataclass
class DegreeReport:
    degrees: dict
    components: int


def degree_histogram(g: AdjacencyGraph) -> DegreeReport:
    n = len(g.labels)
    if n == 0:
        return DegreeReport({}, 0)
    deg = g.matrix.sum(axis=1)
    count, _ = connected_components(csr_matrix(g.matrix), directed=False)
    return DegreeReport({str(l): int(d) for l, d in zip(g.labels, deg)}, int(count))


def graph_from_matrix(labels: Iterable[str], matrix) -> AdjacencyGraph:
    """Wrap a stored 0/1 matrix, checking it is a valid undirected graph."""
    parsed = tuple(parse_label(s) for s in labels)
    m = np.asarray(matrix)
    if m.shape != (len(parsed), len(parsed)):
        raise ValueError(f"adjacency shape {m.shape} does not match {len(parsed)} labels")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("adjacency must be binary")
    if not (m == m.T).all() or np.trace(m) != 0:
        raise ValueError("adjacency must be symmetric with a zero diagonal")
    return AdjacencyGraph(labels=parsed, matrix=m.astype(np.int8))


BCICIV2A_CHANNELS = (
    "Fz", "FC3", "FC1", "FCz", "FC2", "FC4", "C5", "C3", "C1", "Cz", "C2",
    "C4", "C6", "CP3", "CP1", "CPz", "CP2", "CP4", "P1", "Pz", "P2", "POz",
)

# EEGMMIDB channel order as stored in its EDF files (trailing dots stripped)
EEGMMIDB_CHANNELS = (
    "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "C5", "C3", "C1", "Cz",
    "C2", "C4", "C6", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "Fp1",
    "Fpz", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1",
    "Fz", "F2", "F4", "F6", "F8", "FT7", "FT8", "T7", "T8", "T9", "T10",
    "TP7", "TP8", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2", "Iz",
)
