"""On-disk outputs: adjacency, split plans, learning curves, fold summaries, metrics.

Every CSV starts with a provenance comment ``# config=<sha256> weights=<sha1>``
and every JSON carries the same two values under ``"config"`` and
``"weights"``. Floats are written with ``repr`` so identical runs produce
identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Optional, Sequence

import numpy as np

from ..dataset import TrialMeta
from ..electrode_graph import AdjacencyGraph, degree_histogram, graph_from_matrix
from ..evaluation import Fold, Summary, SplitPlan, sma
from ..training import MetricTrace

NO_WEIGHTS = "none"
TRACE_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "sma_val_acc")
SUMMARY_COLUMNS = ("fold", "ma_acc", "acc", "kappa", "best_epoch", "best_sma_epoch", "epochs", "weights")


class ReportError(ValueError):
    pass


def provenance_line(config: str, weights: Optional[str]) -> str:
    return f"# config={config} weights={weights or NO_WEIGHTS}\n"


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_csv(path, config, weights, header, rows) -> None:
    buf = io.StringIO()
    buf.write(provenance_line(config, weights))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())


def read_csv(path):
    """(provenance dict, header, rows as string lists)."""
    with open(path, encoding="utf-8", newline="") as f:
        first = f.readline()
        if not first.startswith("# "):
            raise ReportError(f"{path}: missing provenance line")
        prov = dict(item.split("=", 1) for item in first[2:].split())
        rows = list(csv.reader(f))
    return prov, rows[0], rows[1:]


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, ensure_ascii=False)
        f.write("\n")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ReportError(f"{path}: not valid JSON ({e})") from None


# adjacency ------------------------------------------------------------------------


def write_adjacency(json_path, csv_path, g: AdjacencyGraph, config: str) -> None:
    rep = degree_histogram(g)
    _write_json(json_path, {
        "config": config,
        "weights": NO_WEIGHTS,
        "labels": list(g.names),
        "edges": [[g.names[i], g.names[j]] for i, j in g.edges()],
        "n_edges": g.n_edges,
        "components": rep.components,
        "degrees": rep.degrees,
    })
    _write_csv(csv_path, config, None, [""] + list(g.names),
               ([name] + [int(v) for v in row] for name, row in zip(g.names, g.matrix)))


def read_adjacency(json_path) -> AdjacencyGraph:
    doc = _read_json(json_path)
    labels = doc["labels"]
    idx = {n: i for i, n in enumerate(labels)}
    m = np.zeros((len(labels), len(labels)), dtype=np.int8)
    for a, b in doc["edges"]:
        m[idx[a], idx[b]] = m[idx[b], idx[a]] = 1
    return graph_from_matrix(labels, m)


# split plans ------------------------------------------------------------------------


def write_plan(path, plan: SplitPlan, config: str, seed: int = 0, k: int = 0, violations=()) -> None:
    meta = plan.provenance
    _write_json(path, {
        "config": config,
        "weights": NO_WEIGHTS,
        "framework": plan.framework,
        "scheme": plan.scheme,
        "runs_as_sessions": plan.runs_as_sessions,
        "seed": seed,
        "k": k,
        "audit": {"violations": len(violations)},
        "folds": [{"name": f.name,
                   "train": [meta[i].trial_id for i in f.train],
                   "val": [meta[i].trial_id for i in f.val]} for f in plan.folds],
        "provenance": [{"trial_id": m.trial_id, "subject": m.subject, "session": m.session,
                        "run": m.run, "window_span": list(m.window_span), "label": m.label} for m in meta],
    })


def read_plan(path) -> SplitPlan:
    doc = _read_json(path)
    try:
        meta = [TrialMeta(p["trial_id"], p["subject"], p["session"], p["run"],
                          tuple(p["window_span"]), int(p["label"])) for p in doc["provenance"]]
        index = {m.trial_id: i for i, m in enumerate(meta)}
        folds = [Fold(f["name"], np.array([index[t] for t in f["train"]], dtype=np.int64),
                      np.array([index[t] for t in f["val"]], dtype=np.int64)) for f in doc["folds"]]
        return SplitPlan(doc["framework"], folds, meta, doc.get("scheme", ""), doc.get("runs_as_sessions", False))
    except (KeyError, TypeError) as e:
        raise ReportError(f"{path}: malformed split plan ({e!r})") from None


# learning curves and summaries -------------------------------------------------------


def write_trace(path, trace: MetricTrace, config: str, weights: Optional[str]) -> None:
    smoothed = sma(trace.val_acc) if len(trace) else []
    rows = (
        (trace.epoch[i], trace.train_loss[i], trace.train_acc[i], trace.val_loss[i],
         trace.val_acc[i], trace.lr[i], smoothed[i])
        for i in range(len(trace))
    )
    _write_csv(path, config, weights, TRACE_COLUMNS, rows)


def write_summary(path, summary: Summary, config: str, fold_rows: Sequence[dict]) -> None:
    """One row per fold plus mean and sample-std rows; per-row weights digests."""
    rows = [[r["fold"], r["ma_acc"], r["acc"], r["kappa"], r["best_epoch"], r["best_sma_epoch"],
             r["epochs"], r["weights"]] for r in fold_rows]
    for label, stats in (("mean", summary.mean), ("std", summary.std)):
        rows.append([label, stats["ma_acc"], stats["acc"], stats["kappa"], "", "", "", ""])
    _write_csv(path, config, "per-row", SUMMARY_COLUMNS, rows)


def write_metrics(json_path, csv_path, metrics: dict, confusion: np.ndarray, classes, config: str,
                  weights: str) -> None:
    _write_json(json_path, {"config": config, "weights": weights, **metrics,
                            "classes": list(classes), "confusion": confusion.tolist()})
    _write_csv(csv_path, config, weights, ["true\\pred"] + list(classes),
               ([c] + [int(v) for v in row] for c, row in zip(classes, confusion)))
