"""Stacked trials plus the provenance needed for split and leakage checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .signal_pipeline import EpochedTrial


@dataclass(frozen=True)
class TrialMeta:
    trial_id: str
    subject: str
    session: str
    run: str
    window_span: tuple
    label: int

    @property
    def recording(self) -> tuple[str, str, str]:
        return (self.subject, self.session, self.run)


def trial_id(subject, session, run, span) -> str:
    return f"{subject}/{session}/{run}/{span[0]}-{span[1]}"


@dataclass
class TrialSet:
    x: np.ndarray  # (N, C, T, 1)
    y: np.ndarray  # (N,)
    meta: list

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 4 or self.x.shape[-1] != 1:
            raise ValueError(f"trial data must be (N, C, T, 1), got {self.x.shape}")
        if not len(self.x) == len(self.y) == len(self.meta):
            raise ValueError(
                f"{len(self.x)} trials, {len(self.y)} labels, {len(self.meta)} metadata rows"
            )
        ids = [m.trial_id for m in self.meta]
        if len(set(ids)) != len(ids):
            raise ValueError("trial ids must be unique within a TrialSet")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "TrialSet":
        idx = np.asarray(idx, dtype=np.int64)
        return TrialSet(self.x[idx], self.y[idx], [self.meta[i] for i in idx])

    @classmethod
    def from_epochs(cls, trials: Sequence[EpochedTrial]) -> "TrialSet":
        if not trials:
            raise ValueError("no trials")
        x = np.stack([t.data for t in trials])[..., None]
        y = np.array([t.label for t in trials], dtype=np.int64)
        meta = [
            TrialMeta(trial_id(t.subject_id, t.session_id, t.run_id, t.window_span),
                      t.subject_id, t.session_id, t.run_id, tuple(t.window_span), int(t.label))
            for t in trials
        ]
        return cls(x, y, meta)


def window_overlaps(train_meta: Sequence[TrialMeta], val_meta: Sequence[TrialMeta]):
    """Every (train, val, overlap) pair sharing a trial id or overlapping windows of one run."""
    found = []
    val_ids = {m.trial_id: m for m in val_meta}
    for m in train_meta:
        if m.trial_id in val_ids:
            s = m.window_span
            found.append((m, val_ids[m.trial_id], max(int(s[1] - s[0]), 0)))
    groups = _group(val_meta)
    for rec, tr in _group(train_meta).items():
        va = groups.get(rec)
        if not va:
            continue
        ts = np.array([m.window_span for m in tr], dtype=np.int64).reshape(-1, 2)
        vs = np.array([m.window_span for m in va], dtype=np.int64).reshape(-1, 2)
        overlap = np.minimum(ts[:, None, 1], vs[None, :, 1]) - np.maximum(ts[:, None, 0], vs[None, :, 0])
        for i, j in zip(*np.nonzero(overlap >= 1)):
            if tr[i].trial_id != va[j].trial_id:
                found.append((tr[i], va[j], int(overlap[i, j])))
    return found


def _group(meta):
    groups = {}
    for m in meta:
        groups.setdefault(m.recording, []).append(m)
    return groups
