"""Dataset manifest: which files belong to which subject/session/run, and how events map to classes.

A manifest is JSON::

    {
      "dataset": "toy",
      "classes": ["left", "right"],
      "channels": ["FC1", "FC2", "C1", "C2"],
      "sampling_rate": 250,
      "subjects": [{"id": "S3", "excluded": true}],
      "event_maps": {"imagery": {"T1": 0, "T2": 1}},
      "recordings": [{"file": "s1r1.edf", "subject": "S1", "session": "1", "run": "R1",
                      "event_map": "imagery"}],
      "trials": [{"file": "t0.eegt", "subject": "S1", "session": "1", "run": "R1",
                  "label": 0, "window_span": [0, 64]}]
    }

Paths are relative to the manifest. ``recordings`` are continuous EDF files
that are epoched around mapped events; ``trials`` are already-cut trial
containers. Subjects flagged ``excluded`` are dropped on load. A trial
entry without ``window_span`` is taken to be the next non-overlapping cut of
its run, in manifest order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from ..signal_pipeline import EpochedTrial
from .container import read_trial


class ManifestError(ValueError):
    pass


@dataclass
class RecordingEntry:
    file: str
    subject: str
    session: str
    run: str
    event_map: dict  # event code -> class index


@dataclass
class TrialEntry:
    file: str
    subject: str
    session: str
    run: str
    label: Optional[int] = None
    window_span: Optional[tuple] = None


@dataclass
class DatasetManifest:
    dataset: str
    classes: list
    channels: Optional[list]
    sampling_rate: Optional[float]
    recordings: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    excluded: set = field(default_factory=set)
    root: str = "."

    def path(self, rel: str) -> str:
        return os.path.join(self.root, rel)

    def to_json(self) -> dict:
        out = {"dataset": self.dataset, "classes": list(self.classes)}
        if self.channels is not None:
            out["channels"] = list(self.channels)
        if self.sampling_rate is not None:
            out["sampling_rate"] = self.sampling_rate
        if self.excluded:
            out["subjects"] = [{"id": s, "excluded": True} for s in sorted(self.excluded)]
        if self.recordings:
            maps, names = {}, {}
            for r in self.recordings:
                key = json.dumps(r.event_map, sort_keys=True)
                names.setdefault(key, f"map{len(names)}")
                maps[names[key]] = r.event_map
            out["event_maps"] = maps
            out["recordings"] = [
                {"file": r.file, "subject": r.subject, "session": r.session, "run": r.run,
                 "event_map": names[json.dumps(r.event_map, sort_keys=True)]}
                for r in self.recordings
            ]
        if self.trials:
            out["trials"] = []
            for t in self.trials:
                row = {"file": t.file, "subject": t.subject, "session": t.session, "run": t.run}
                if t.label is not None:
                    row["label"] = t.label
                if t.window_span is not None:
                    row["window_span"] = list(t.window_span)
                out["trials"].append(row)
        return out


def _require(obj, key, where):
    if key not in obj:
        raise ManifestError(f"{where}: missing required key {key!r}")
    return obj[key]


def parse_manifest(doc: dict, root: str = ".", check_files: bool = True) -> DatasetManifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    classes = list(_require(doc, "classes", "manifest"))
    if not classes:
        raise ManifestError("manifest declares no classes")
    k = len(classes)
    excluded = {str(s["id"]) for s in doc.get("subjects", []) if s.get("excluded", False)}
    maps = doc.get("event_maps", {})
    for name, m in maps.items():
        for code, label in m.items():
            if not (isinstance(label, int) and 0 <= label < k):
                raise ManifestError(f"event map {name!r}: {code} -> {label!r} is not a class index below {k}")
    man = DatasetManifest(
        dataset=str(doc.get("dataset", "")),
        classes=classes,
        channels=list(doc["channels"]) if "channels" in doc else None,
        sampling_rate=float(doc["sampling_rate"]) if "sampling_rate" in doc else None,
        excluded=excluded,
        root=root,
    )
    for i, r in enumerate(doc.get("recordings", [])):
        where = f"recording {i}"
        name = _require(r, "event_map", where)
        if name not in maps:
            raise ManifestError(f"{where}: unknown event map {name!r}")
        entry = RecordingEntry(str(_require(r, "file", where)), str(_require(r, "subject", where)),
                               str(r.get("session", "1")), str(r.get("run", "1")), dict(maps[name]))
        if entry.subject not in excluded:
            man.recordings.append(entry)
    for i, t in enumerate(doc.get("trials", [])):
        where = f"trial {i}"
        label = t.get("label")
        if label is not None and not (isinstance(label, int) and 0 <= label < k):
            raise ManifestError(f"{where}: label {label!r} outside the {k} declared classes")
        span = t.get("window_span")
        if span is not None and (len(span) != 2 or not span[0] < span[1]):
            raise ManifestError(f"{where}: window_span {span!r} must be [start, stop) with start < stop")
        entry = TrialEntry(str(_require(t, "file", where)), str(_require(t, "subject", where)),
                           str(t.get("session", "1")), str(t.get("run", "1")), label,
                           tuple(int(v) for v in span) if span is not None else None)
        if entry.subject not in excluded:
            man.trials.append(entry)
    if not man.recordings and not man.trials:
        raise ManifestError("manifest lists no recordings or trials (after exclusions)")
    if check_files:
        missing = [e.file for e in man.recordings + man.trials if not os.path.isfile(man.path(e.file))]
        if missing:
            raise ManifestError(f"{len(missing)} referenced files do not exist, e.g. {missing[0]}")
    return man


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: not valid JSON ({e})") from None
    return parse_manifest(doc, os.path.dirname(os.path.abspath(path)), check_files)


def write_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest.to_json(), f, indent=2)
        f.write("\n")


def load_trials(manifest: DatasetManifest) -> list:
    """Read every trial container, attaching provenance and checking labels and shapes."""
    out: list[EpochedTrial] = []
    cursor = {}
    for e in manifest.trials:
        trial = read_trial(manifest.path(e.file), e.subject, e.session, e.run, e.window_span)
        if e.label is not None and e.label != trial.label:
            raise ManifestError(f"{e.file}: container label {trial.label} but manifest says {e.label}")
        if trial.label >= len(manifest.classes):
            raise ManifestError(f"{e.file}: label {trial.label} outside the declared classes")
        if manifest.channels is not None and trial.data.shape[0] != len(manifest.channels):
            raise ManifestError(
                f"{e.file}: {trial.data.shape[0]} channels, manifest declares {len(manifest.channels)}")
        if e.window_span is None:
            key = (e.subject, e.session, e.run)
            start = cursor.get(key, 0)
            trial.window_span = (start, start + trial.data.shape[1])
            cursor[key] = trial.window_span[1]
        out.append(trial)
    if len({t.data.shape for t in out}) > 1:
        raise ManifestError(f"trials differ in shape: {sorted({t.data.shape for t in out})}")
    return out
