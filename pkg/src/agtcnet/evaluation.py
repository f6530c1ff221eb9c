"""Training/validation split frameworks, leakage audit and evaluation metrics."""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import RngStream
from .dataset import TrialMeta, window_overlaps

FRAMEWORKS = ("SL-DS", "SL-RS", "SM-DS", "SM-RS", "SN", "SL-DS-FT")
SMA_WINDOW = 20


# splits -------------------------------------------------------------------------


@dataclass
class Fold:
    name: str
    train: np.ndarray  # indices into the provenance list
    val: np.ndarray


@dataclass
class SplitPlan:
    framework: str
    folds: list
    provenance: list  # TrialMeta per trial
    scheme: str = ""
    runs_as_sessions: bool = False

    def session_key(self, m: TrialMeta):
        return (m.subject, m.session, m.run) if self.runs_as_sessions else (m.subject, m.session)


class SplitError(ValueError):
    pass


def _natural_key(s: str):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", str(s))]


def _indices(meta, pred) -> np.ndarray:
    return np.array([i for i, m in enumerate(meta) if pred(m)], dtype=np.int64)


def contiguous_blocks(items: Sequence, k: int) -> list:
    """Split into k near-equal contiguous blocks; the remainder goes to the first blocks."""
    n = len(items)
    if not 1 <= k <= n:
        raise SplitError(f"cannot make {k} folds from {n} items")
    base, extra = divmod(n, k)
    out, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        out.append(list(items[start:start + size]))
        start += size
    return out


def stratified_folds(labels: np.ndarray, k: int, rng: RngStream) -> list:
    """Per-class round-robin fold assignment after a seeded shuffle."""
    labels = np.asarray(labels)
    if len(labels) < k:
        raise SplitError(f"cannot make {k} folds from {len(labels)} trials")
    assign = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        # continue the round robin across classes so fold sizes stay balanced
        assign[members] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    return [np.flatnonzero(assign == f) for f in range(k)]


def _loseo(meta, members, key_fn, label):
    sessions = sorted({key_fn(meta[i]) for i in members}, key=lambda s: _natural_key("/".join(s)))
    folds = []
    for s in sessions:
        val = np.array([i for i in members if key_fn(meta[i]) == s], dtype=np.int64)
        train = np.array([i for i in members if key_fn(meta[i]) != s], dtype=np.int64)
        folds.append(Fold(f"{label}session={'/'.join(s)}", train, val))
    return folds


def make_splits(
    framework: str,
    meta: Sequence[TrialMeta],
    k: int = 5,
    seed: int = 0,
    scheme: str = "loso",
    runs_as_sessions: bool = False,
) -> SplitPlan:
    """Build train/validation folds for one of the six frameworks.

    SN uses ``scheme`` 'loso' (one subject per fold) or 'lmso' (``k`` blocks of
    sorted subjects). DS frameworks leave one session out; RS frameworks use a
    stratified ``k``-fold with a seeded shuffle. ``runs_as_sessions`` treats
    each (session, run) pair as its own session.
    """
    if framework not in FRAMEWORKS:
        raise SplitError(f"unknown framework {framework!r}; expected one of {FRAMEWORKS}")
    meta = list(meta)
    if not meta:
        raise SplitError("no trials to split")
    plan = SplitPlan(framework, [], meta, scheme if framework == "SN" else "",
                     runs_as_sessions)
    subjects = sorted({m.subject for m in meta}, key=_natural_key)
    rng = RngStream(seed)

    if framework == "SN":
        if len(subjects) < 2:
            raise SplitError("SN needs at least two subjects")
        if scheme == "loso":
            blocks = [[s] for s in subjects]
        elif scheme == "lmso":
            blocks = contiguous_blocks(subjects, k)
        else:
            raise SplitError(f"unknown SN scheme {scheme!r}; expected 'loso' or 'lmso'")
        for block in blocks:
            held = set(block)
            plan.folds.append(Fold(
                "val=" + ",".join(block),
                _indices(meta, lambda m: m.subject not in held),
                _indices(meta, lambda m: m.subject in held),
            ))
        return plan

    if framework in ("SL-DS", "SL-DS-FT", "SM-DS"):
        for s in subjects:
            n_sessions = len({plan.session_key(m) for m in meta if m.subject == s})
            if n_sessions < 2:
                raise SplitError(f"subject {s} has a single session; nothing to leave out")
        if framework == "SM-DS":
            # pooled: every subject's session i forms one validation set
            def key(m):
                return plan.session_key(m)[1:]
            plan.folds = _loseo(meta, range(len(meta)), key, "")
        else:
            for s in subjects:
                members = [i for i, m in enumerate(meta) if m.subject == s]
                plan.folds += _loseo(meta, members, plan.session_key, f"subject={s}/")
        return plan

    # random (stratified) splits
    groups = [(s, [i for i, m in enumerate(meta) if m.subject == s]) for s in subjects] \
        if framework == "SL-RS" else [("", list(range(len(meta))))]
    for s, members in groups:
        members = np.array(members, dtype=np.int64)
        labels = np.array([meta[i].label for i in members])
        sub = rng.substream("rs", s)
        for f, val_local in enumerate(stratified_folds(labels, k, sub)):
            mask = np.zeros(len(members), dtype=bool)
            mask[val_local] = True
            prefix = f"subject={s}/" if s else ""
            plan.folds.append(Fold(f"{prefix}fold={f + 1}", members[~mask], members[mask]))
    return plan


@dataclass
class Violation:
    fold: str
    kind: str  # 'overlap', 'identity', 'subject' or 'session'
    train_id: str
    val_id: str
    overlap: int = 0


def leakage_audit(plan: SplitPlan) -> list:
    """Every train/val pair in any fold that shares data or breaks the framework's disjointness."""
    out = []
    meta = plan.provenance
    for fold in plan.folds:
        tr = [meta[i] for i in fold.train]
        va = [meta[i] for i in fold.val]
        for a, b, n in window_overlaps(tr, va):
            kind = "identity" if a.trial_id == b.trial_id else "overlap"
            out.append(Violation(fold.name, kind, a.trial_id, b.trial_id, n))
        if plan.framework == "SN":
            shared = {m.subject for m in tr} & {m.subject for m in va}
            out += [Violation(fold.name, "subject", s, s) for s in sorted(shared)]
        elif plan.framework.endswith("DS") or plan.framework == "SL-DS-FT":
            shared = {plan.session_key(m) for m in tr} & {plan.session_key(m) for m in va}
            out += [Violation(fold.name, "session", "/".join(s), "/".join(s)) for s in sorted(shared)]
    return out


# metrics --------------------------------------------------------------------------


def _check_pair(preds, labels):
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"predictions {preds.shape} and labels {labels.shape} must be equal-length vectors")
    if preds.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return preds, labels


def accuracy(preds, labels) -> float:
    preds, labels = _check_pair(preds, labels)
    return float(np.count_nonzero(preds == labels)) / preds.size


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    preds, labels = _check_pair(preds, labels)
    for name, v in (("prediction", preds), ("label", labels)):
        if v.min() < 0 or v.max() >= num_classes:
            raise ValueError(f"{name} outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels.astype(np.int64), preds.astype(np.int64)), 1)
    return cm


def cohens_kappa(preds, labels, num_classes: int) -> float:
    cm = confusion_matrix(preds, labels, num_classes).astype(np.float64)
    n = cm.sum()
    pa = np.trace(cm) / n
    pe = float((cm.sum(axis=0) * cm.sum(axis=1)).sum() / (n * n))
    if pe == 1.0:
        warnings.warn("chance agreement is 1 (single class on both sides); kappa set to 0")
        return 0.0
    return float((pa - pe) / (1.0 - pe))


def sma(series, window: int = SMA_WINDOW) -> np.ndarray:
    """Trailing mean over the last ``window`` values; early epochs average what exists."""
    v = np.asarray(series, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("sma needs a non-empty 1-D series")
    if window < 1:
        raise ValueError("window must be positive")
    c = np.concatenate([[0.0], np.cumsum(v)])
    e = np.arange(1, v.size + 1)
    lo = np.maximum(e - window, 0)
    return (c[e] - c[lo]) / (e - lo)


def max_sma(series, window: int = SMA_WINDOW) -> tuple[int, float]:
    """(1-based epoch, value) of the largest smoothed value; earliest on ties."""
    s = sma(series, window)
    i = int(np.argmax(s))
    return i + 1, float(s[i])


# Welch's t-test -----------------------------------------------------------------

_CF_TOL = 1e-15
_CF_MAX_ITER = 10_000


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        for num in (m * (b - m) * x / ((qam + m2) * (a + m2)),
                    -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))):
            d = 1.0 + num * d
            d = 1.0 / (d if abs(d) > tiny else tiny)
            c = 1.0 + num / c
            c = c if abs(c) > tiny else tiny
            delta = d * c
            h *= delta
        if abs(delta - 1.0) < _CF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, 1.0 - x) / b


def student_t_sf(t: float, dof: float) -> float:
    """P(T > t) for Student's t with ``dof`` degrees of freedom."""
    half_tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
    return half_tail if t >= 0 else 1.0 - half_tail


@dataclass
class WelchResult:
    t: float
    dof: float
    p: float


def welch_t_test_right(a, b) -> WelchResult:
    """H1: mean(a) > mean(b), unequal variances."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if va == 0.0 or vb == 0.0:
        raise ValueError("degenerate sample: zero variance")
    se2 = va + vb
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    dof = float(se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1)))
    return WelchResult(t, dof, student_t_sf(t, dof))


# fold results & aggregation ---------------------------------------------------------


@dataclass
class FoldResult:
    fold: str
    acc: float
    ma_acc: float
    kappa: float
    confusion: Optional[np.ndarray] = None
    report: object = None  # TrainReport that produced it, if any


def fold_result(fold: str, val_acc_trace, preds, labels, num_classes: int, report=None) -> FoldResult:
    """Acc and kappa from the best checkpoint's predictions, MA Acc from the learning curve."""
    _, ma = max_sma(val_acc_trace)
    return FoldResult(
        fold=fold,
        acc=accuracy(preds, labels),
        ma_acc=ma,
        kappa=cohens_kappa(preds, labels, num_classes),
        confusion=confusion_matrix(preds, labels, num_classes),
        report=report,
    )


@dataclass
class Summary:
    n: int
    mean: dict
    std: dict  # n-1 convention; 0 with single_fold set when n == 1
    single_fold: bool
    rows: list
    comparison: dict = field(default_factory=dict)  # metric -> WelchResult vs another model

    def format(self) -> str:
        lines = [f"{'fold':<28}{'MA Acc (%)':>12}{'Acc (%)':>10}{'κ-score':>10}"]
        for r in self.rows:
            lines.append(f"{r.fold:<28}{100 * r.ma_acc:>12.2f}{100 * r.acc:>10.2f}{r.kappa:>10.4f}")
        m, s = self.mean, self.std
        lines.append(
            f"{'mean ± std (n-1)':<28}{100 * m['ma_acc']:>7.2f} ± {100 * s['ma_acc']:<6.2f}"
            f"{100 * m['acc']:>7.2f} ± {100 * s['acc']:<6.2f}{m['kappa']:>8.4f} ± {s['kappa']:.4f}"
        )
        if self.single_fold:
            lines.append("n=1: standard deviation undefined, reported as 0")
        for metric, w in self.comparison.items():
            lines.append(f"welch {metric}: t={w.t:.4f} dof={w.dof:.2f} p={w.p:.6f}")
        return "\n".join(lines)


METRICS = ("ma_acc", "acc", "kappa")


def aggregate_report(results: Sequence[FoldResult], baseline: Optional[Sequence[FoldResult]] = None) -> Summary:
    """Mean and sample std over folds (and repetitions, pooled), optionally tested against a baseline."""
    if not results:
        raise ValueError("no fold results to aggregate")
    n = len(results)
    mean, std = {}, {}
    for k in METRICS:
        v = np.array([getattr(r, k) for r in results], dtype=np.float64)
        mean[k] = float(v.mean())
        std[k] = float(v.std(ddof=1)) if n > 1 else 0.0
    summary = Summary(n, mean, std, n == 1, list(results))
    if baseline:
        for k in METRICS:
            a = [getattr(r, k) for r in results]
            b = [getattr(r, k) for r in baseline]
            try:
                summary.comparison[k] = welch_t_test_right(a, b)
            except ValueError as e:
                warnings.warn(f"welch test on {k} skipped: {e}")
    return summary
