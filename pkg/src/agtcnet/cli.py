"""Command line: preprocess -> graph -> split -> train/finetune -> eval/infer, plus audit.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
from dataclasses import replace

import numpy as np

from .autodiff import RngStream
from .checkpoint import CheckpointError, file_digest, load_weights
from .dataio.config import ConfigError, RunConfig, load_config
from .dataio.container import ContainerError, read_trial, write_trial
from .dataio.edf import EdfParseError, read_edf
from .dataio.manifest import (
    DatasetManifest,
    ManifestError,
    TrialEntry,
    load_manifest,
    load_trials,
    write_manifest,
)
from .dataio.reports import (
    ReportError,
    read_adjacency,
    read_plan,
    write_adjacency,
    write_metrics,
    write_plan,
    write_summary,
    write_trace,
)
from .dataset import TrialSet
from .electrode_graph import LabelError, build_adjacency, degree_histogram
from .evaluation import (
    SplitError,
    aggregate_report,
    cohens_kappa,
    confusion_matrix,
    fold_result,
    leakage_audit,
    make_splits,
)
from .model import ShapeError, build_model, predict_proba
from .signal_pipeline import RawRecording, epoch_length, extract_epochs, preprocess
from .training import FINE_TUNE_LR, LeakageError, NumericError, evaluate, fine_tune, train

log = logging.getLogger("agtcnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
_DATA_ERRORS = (EdfParseError, ContainerError, ManifestError, ReportError, CheckpointError, SplitError,
                LeakageError, LabelError, ShapeError, OSError)
_NUMERIC_ERRORS = (NumericError, FloatingPointError, ArithmeticError)


class DataError(ValueError):
    pass


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# helpers ------------------------------------------------------------------------------


def _args_digest(**values) -> str:
    """Stand-in run hash for commands invoked without a config file."""
    return hashlib.sha256(json.dumps(values, sort_keys=True, default=str).encode()).hexdigest()


def _config(path) -> RunConfig | None:
    return load_config(path) if path else None


def _out_dir(explicit, cfg: RunConfig | None, sub: str) -> str:
    if explicit:
        out = explicit
    elif cfg is not None and cfg.output_dir:
        out = os.path.join(cfg.resolve(cfg.output_dir), sub)
    else:
        raise UsageError("no output directory: pass --out or set [output] dir")
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig | None, out: str) -> None:
    if cfg is not None:
        with open(os.path.join(out, "run.ini"), "w", encoding="utf-8") as f:
            f.write(cfg.text)


def _safe(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", s).strip("-") or "x"


def _data_manifest(args, cfg: RunConfig | None) -> str:
    if args.data:
        return args.data
    if cfg is not None and cfg.output_dir:
        candidate = os.path.join(cfg.resolve(cfg.output_dir), "epochs", "manifest.json")
        if os.path.isfile(candidate):
            return candidate
    if cfg is not None and cfg.manifest:
        return cfg.resolve(cfg.manifest)
    raise UsageError("no epoch manifest: pass --data, or run preprocess with the same config first")


def _load_dataset(path):
    man = load_manifest(path)
    if not man.trials:
        raise DataError(f"{path} lists no epoched trials; run preprocess first")
    data = TrialSet.from_epochs(load_trials(man))
    return man, data


def _graph(man: DatasetManifest, cfg: RunConfig | None, n_channels: int):
    if cfg is not None and cfg.montage:
        g = read_adjacency(cfg.resolve(cfg.montage))
    else:
        if man.channels is None:
            raise DataError("epoch manifest declares no channel labels; cannot build the electrode graph")
        g = build_adjacency(man.channels)
    if len(g.labels) != n_channels:
        raise DataError(f"graph has {len(g.labels)} electrodes but trials have {n_channels} channels")
    return g


def _fold_sets(plan, data: TrialSet, selection):
    index = {m.trial_id: i for i, m in enumerate(data.meta)}
    missing = [m.trial_id for m in plan.provenance if m.trial_id not in index]
    if missing:
        raise DataError(f"{len(missing)} plan trials are absent from the data, e.g. {missing[0]}")
    chosen = []
    for i, fold in enumerate(plan.folds):
        if selection and fold.name not in selection and str(i) not in selection:
            continue
        tr = data.subset([index[plan.provenance[j].trial_id] for j in fold.train])
        va = data.subset([index[plan.provenance[j].trial_id] for j in fold.val])
        chosen.append((i, fold, tr, va))
    if not chosen:
        raise UsageError(f"fold selection {selection} matches none of {[f.name for f in plan.folds]}")
    return chosen


# subcommands --------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    if not cfg.manifest:
        raise ConfigError("[data] manifest is required for preprocess")
    man = load_manifest(cfg.resolve(cfg.manifest))
    out = _out_dir(args.out, cfg, "epochs")
    _echo_config(cfg, out)
    entries, channels, fs_out = [], man.channels, None
    skipped = 0

    def emit(trial):
        nonlocal fs_out
        name = _safe(f"{trial.subject_id}_{trial.session_id}_{trial.run_id}_"
                     f"{trial.window_span[0]}-{trial.window_span[1]}") + ".eegt"
        write_trial(os.path.join(out, name), trial.data, trial.sampling_rate, trial.label)
        entries.append(TrialEntry(name, trial.subject_id, trial.session_id, trial.run_id, trial.label,
                                  tuple(trial.window_span)))
        fs_out = trial.sampling_rate

    for r in man.recordings:
        if cfg.t_end is None:
            raise ConfigError("[preprocess] t_end is required to epoch continuous recordings")
        rec = preprocess(read_edf(man.path(r.file)), cfg.target_fs)
        labels = [l.rstrip(".") for l in rec.channel_labels]
        if channels is None:
            channels = labels
        elif [l.lower() for l in labels] != [c.lower() for c in channels]:
            raise DataError(f"{r.file}: channels {labels} differ from {channels}")
        rep = extract_epochs(rec, cfg.t_start, cfg.t_end, r.event_map, r.subject, r.session, r.run)
        skipped += len(rep.skipped)
        for t in rep.trials:
            emit(t)

    raw_cursor = {}
    for e in man.trials:
        trial = read_trial(man.path(e.file), e.subject, e.session, e.run, e.window_span)
        if e.window_span is None:
            key = (e.subject, e.session, e.run)
            start = raw_cursor.get(key, 0)
            trial.window_span = (start, start + trial.data.shape[1])
            raw_cursor[key] = trial.window_span[1]
        labels = man.channels or [f"ch{i}" for i in range(trial.data.shape[0])]
        rec = preprocess(RawRecording(list(labels), trial.data, trial.sampling_rate), cfg.target_fs)
        data = rec.data
        span0 = trial.window_span[0]
        offset = 0
        if cfg.t_end is not None:
            # crop relative to the container's first sample
            offset = int(round(cfg.t_start * rec.sampling_rate))
            n = epoch_length(cfg.t_start, cfg.t_end, rec.sampling_rate)
            if offset < 0 or offset + n > data.shape[1]:
                raise DataError(f"{e.file}: timeframe [{cfg.t_start}, {cfg.t_end}) s exceeds the "
                                f"{data.shape[1] / rec.sampling_rate:.3f} s trial")
            data = data[:, offset:offset + n]
        scale = rec.sampling_rate / trial.sampling_rate
        start = int(round(span0 * scale)) + offset
        trial = replace(trial, data=data, sampling_rate=rec.sampling_rate,
                        window_span=(start, start + data.shape[1]))
        emit(trial)

    if not entries:
        raise DataError("no epochs extracted")
    result = DatasetManifest(man.dataset, man.classes, channels, fs_out, trials=entries)
    doc = result.to_json()
    doc.update({"config": cfg.digest, "weights": "none"})
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    print(f"wrote {len(entries)} epochs to {out} ({skipped} skipped)")
    return EXIT_OK


def _read_montage(path) -> list:
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if path.endswith(".json"):
        doc = json.loads(text)
        labels = doc.get("channels") or doc.get("labels")
        if not labels:
            raise DataError(f"{path}: no 'channels' or 'labels' list")
        return list(labels)
    return [t.rstrip(".") for t in re.split(r"[\s,;]+", text) if t]


def cmd_graph(args) -> int:
    cfg = _config(args.config)
    labels = _read_montage(args.montage)
    g = build_adjacency(labels)
    out = _out_dir(args.out, cfg, "graph")
    digest = cfg.digest if cfg else _args_digest(command="graph", labels=labels)
    write_adjacency(os.path.join(out, "adjacency.json"), os.path.join(out, "adjacency.csv"), g, digest)
    rep = degree_histogram(g)
    print(f"{len(labels)} electrodes, {g.n_edges} edges, {rep.components} connected component(s)")
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = _config(args.config)
    framework = (args.framework or (cfg.framework if cfg else "SN")).upper()
    cv = (args.cv or (cfg.cv if cfg else "loso")).lower()
    k = args.k if args.k is not None else (cfg.k if cfg else 5)
    seed = args.seed if args.seed is not None else (cfg.split_seed if cfg else 0)
    runs = args.runs_as_sessions or (cfg.runs_as_sessions if cfg else False)
    _, data = _load_dataset(_data_manifest(args, cfg))
    plan = make_splits(framework, data.meta, k=k, seed=seed, scheme=cv, runs_as_sessions=runs)
    violations = leakage_audit(plan)
    for v in violations[:20]:
        print(f"leak [{v.fold}] {v.kind}: {v.train_id} ~ {v.val_id} ({v.overlap} samples)", file=sys.stderr)
    if violations and not args.allow_leakage:
        raise DataError(f"plan fails the leakage audit with {len(violations)} violations; not written")
    digest = cfg.digest if cfg else _args_digest(command="split", framework=framework, cv=cv, k=k,
                                                 seed=seed, runs=runs, data=[m.trial_id for m in data.meta])
    out = args.out or os.path.join(_out_dir(None, cfg, "split"), "plan.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_plan(out, plan, digest, seed=seed, k=k, violations=violations)
    print(f"{framework} {plan.scheme or ''} plan: {len(plan.folds)} folds over {len(data)} trials -> {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    plan = read_plan(args.plan)
    violations = leakage_audit(plan)
    for v in violations:
        print(f"[{v.fold}] {v.kind}: {v.train_id} ~ {v.val_id} ({v.overlap} samples)")
    print(f"{plan.framework}: {len(plan.folds)} folds, {len(violations)} violations")
    return EXIT_DATA if violations else EXIT_OK


def _run_folds(args, tune: bool) -> int:
    cfg = load_config(args.config)
    plan = read_plan(args.plan)
    man, data = _load_dataset(_data_manifest(args, cfg))
    out = _out_dir(args.out, cfg, "finetune" if tune else "train")
    _echo_config(cfg, out)
    selection = args.folds.split(",") if args.folds else cfg.folds
    _, c, t, _ = data.x.shape
    k = len(man.classes)
    root = RngStream(cfg.train.seed)
    results, rows = [], []
    for i, fold, tr, va in _fold_sets(plan, data, selection):
        fold_dir = os.path.join(out, f"fold-{i:02d}")
        os.makedirs(fold_dir, exist_ok=True)
        ckpt = os.path.join(fold_dir, "best.agtc")
        rng = root.substream("fold", i)
        if tune:
            hyper = replace(cfg.train, lr=args.lr)
            report = fine_tune(args.base, tr, va, hyper, rng=rng, checkpoint_path=ckpt)
        else:
            graph = _graph(man, cfg, c)
            model = build_model(cfg.model_config(c, t, k), graph, seed=cfg.model_seed)
            report = train(model, tr, va, cfg.train, rng=rng, checkpoint_path=ckpt, tag=plan.framework)
        if not os.path.isfile(ckpt):
            raise NumericError(f"fold {fold.name}: no epoch produced a checkpoint")
        digest = file_digest(ckpt)
        _, _, preds = evaluate(report.best_state, va, cfg.train.loss, cfg.train.eval_batch_size)
        res = fold_result(fold.name, report.trace.val_acc, preds, va.y, k, report)
        results.append(res)
        rows.append({"fold": fold.name, "ma_acc": res.ma_acc, "acc": res.acc, "kappa": res.kappa,
                     "best_epoch": report.best_epoch, "best_sma_epoch": report.best_sma_epoch,
                     "epochs": len(report.trace), "weights": digest})
        write_trace(os.path.join(fold_dir, "trace.csv"), report.trace, cfg.digest, digest)
        print(f"[{fold.name}] acc {res.acc:.4f} ma_acc {res.ma_acc:.4f} kappa {res.kappa:.4f} "
              f"best epoch {report.best_epoch}/{len(report.trace)}")
    summary = aggregate_report(results)
    write_summary(os.path.join(out, "summary.csv"), summary, cfg.digest, rows)
    print(summary.format())
    return EXIT_OK


def cmd_train(args) -> int:
    return _run_folds(args, tune=False)


def cmd_finetune(args) -> int:
    return _run_folds(args, tune=True)


def cmd_eval(args) -> int:
    cfg = _config(args.config)
    model = load_weights(args.checkpoint)
    man, data = _load_dataset(_data_manifest(args, cfg))
    if args.plan:
        plan = read_plan(args.plan)
        sel = [args.fold] if args.fold is not None else None
        chosen = _fold_sets(plan, data, sel)
        if len(chosen) != 1:
            raise UsageError("--plan needs --fold to pick one validation set")
        data = chosen[0][3]
    k = model.config.num_classes
    if len(man.classes) != k:
        raise DataError(f"checkpoint has {k} classes, data declares {len(man.classes)}")
    expected = (model.config.num_channels, model.config.num_samples)
    if data.x.shape[1:3] != expected:
        raise DataError(f"trials are {data.x.shape[1:3]} (channels, samples); checkpoint expects {expected}")
    loss, acc, preds = evaluate(model, data)
    cm = confusion_matrix(preds, data.y, k)
    weights = file_digest(args.checkpoint)
    digest = cfg.digest if cfg else _args_digest(command="eval", weights=weights,
                                                 trials=[m.trial_id for m in data.meta])
    out = _out_dir(args.out, cfg, "eval")
    metrics = {"n": len(data), "loss": loss, "acc": acc, "kappa": cohens_kappa(preds, data.y, k)}
    write_metrics(os.path.join(out, "metrics.json"), os.path.join(out, "confusion.csv"), metrics, cm,
                  man.classes, digest, weights)
    print(f"n={len(data)} acc={acc:.4f} kappa={metrics['kappa']:.4f} loss={loss:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load_weights(args.checkpoint)
    trial = read_trial(args.trial)
    expected = (model.config.num_channels, model.config.num_samples)
    if trial.data.shape != expected:
        raise DataError(f"trial is {trial.data.shape} (channels, samples); checkpoint expects {expected}")
    probs = predict_proba(model, trial.data[None, :, :, None])[0]
    names = args.classes.split(",") if args.classes else [f"class{i}" for i in range(len(probs))]
    if len(names) != len(probs):
        raise UsageError(f"{len(names)} class names for {len(probs)} outputs")
    for n, p in zip(names, probs):
        print(f"{n}\t{p:.6f}")
    return EXIT_OK


# entry point ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="agtcnet", description="EEG motor-imagery graph network pipeline")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="EDF recordings or raw trial containers -> epoch containers")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("graph", help="montage -> adjacency JSON and CSV")
    s.add_argument("--montage", required=True, help="label list (text) or JSON with 'channels'")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("split", help="epoch manifest -> audited split-plan JSON")
    s.add_argument("--data", help="epoch manifest (default: preprocess output of --config)")
    s.add_argument("--config")
    s.add_argument("--framework", type=str.upper)
    s.add_argument("--cv", choices=("loso", "lmso"))
    s.add_argument("--k", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--runs-as-sessions", action="store_true")
    s.add_argument("--allow-leakage", action="store_true", help="write the plan even if the audit fails")
    s.add_argument("--out", help="plan file path")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("audit", help="leakage report for a split plan")
    s.add_argument("--plan", required=True)
    s.set_defaults(func=cmd_audit)

    for name, func in (("train", cmd_train), ("finetune", cmd_finetune)):
        s = sub.add_parser(name, help=f"{name} every (or selected) fold of a plan")
        s.add_argument("--config", required=True)
        s.add_argument("--plan", required=True)
        s.add_argument("--data")
        s.add_argument("--folds", help="comma-separated fold names or indices")
        s.add_argument("--out")
        if name == "finetune":
            s.add_argument("--base", required=True, help="checkpoint to start from")
            s.add_argument("--lr", type=float, default=FINE_TUNE_LR)
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="checkpoint + data -> metrics JSON and confusion CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data")
    s.add_argument("--config")
    s.add_argument("--plan")
    s.add_argument("--fold")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="class probabilities for one trial container")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--trial", required=True)
    s.add_argument("--classes", help="comma-separated class names")
    s.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, *_DATA_ERRORS) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
