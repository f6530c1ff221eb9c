"""Tiny on-disk datasets (EDF recordings, trial containers, run configs) for pipeline tests."""

import json
import os

import numpy as np

from agtcnet.dataio.container import write_trial
from agtcnet.dataio.edf import Annotation, physical_to_digital, write_edf

from micro import MICRO, MICRO_LABELS

FS = 250
EVENT_SPACING = 1.0  # seconds between cues
CUES_PER_RUN = 8

MICRO_MODEL_SECTION = "\n".join(
    f"{name} = {getattr(MICRO, name)}"
    for name in ("ctc_filters", "ctc_kernel", "gcat_heads", "gcat_out_features", "gcat_kernel",
                 "attn_kernel", "ds_depth", "gcap_depth", "gtc_filters", "gtc_kernel", "tce_kernel",
                 "mha_heads", "mha_key_dim")
)


def recording(seed, cues=CUES_PER_RUN):
    """Four-channel 250 Hz signal: a 6 Hz burst after each cue, sign set by the class."""
    rng = np.random.default_rng(seed)
    n = int((cues * EVENT_SPACING + 1.0) * FS)
    x = rng.normal(0, 5.0, (4, n))
    codes = []
    t = np.arange(int(0.6 * FS)) / FS
    for i in range(cues):
        code = "T1" if i % 2 == 0 else "T2"
        onset = int((0.5 + i * EVENT_SPACING) * FS)
        sign = 1.0 if code == "T1" else -1.0
        x[:, onset:onset + t.size] += sign * 40.0 * np.sin(2 * np.pi * 6 * t)
        codes.append(Annotation(0.5 + i * EVENT_SPACING, 0.6, code))
    return x, codes


def write_edf_dataset(root, subjects=3, sessions=2, seed=0):
    """EDF+ recordings plus a manifest; returns the manifest path."""
    os.makedirs(root, exist_ok=True)
    recs = []
    for s in range(1, subjects + 1):
        for se in range(1, sessions + 1):
            x, ann = recording(seed + 100 * s + se)
            name = f"S{s:03d}E{se}.edf"
            n = x.shape[1] - x.shape[1] % FS
            write_edf(os.path.join(root, name), [l + "." for l in MICRO_LABELS],
                      physical_to_digital(x[:, :n]), FS, annotations=ann)
            recs.append({"file": name, "subject": f"S{s}", "session": str(se), "run": "R1",
                         "event_map": "imagery"})
    manifest = {
        "dataset": "toy",
        "classes": ["left", "right"],
        "sampling_rate": FS,
        "event_maps": {"imagery": {"T1": 0, "T2": 1}},
        "recordings": recs,
    }
    path = os.path.join(root, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f)
    return path


def write_container_dataset(root, subjects=2, trials=4, channels=4, samples=128, fs=125.0, seed=0):
    os.makedirs(root, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for s in range(1, subjects + 1):
        for i in range(trials):
            name = f"s{s}_t{i}.eegt"
            write_trial(os.path.join(root, name), rng.normal(0, 10, (channels, samples)), fs, i % 2)
            entries.append({"file": name, "subject": f"S{s}", "session": "1", "run": "1", "label": i % 2})
    path = os.path.join(root, "manifest.json")
    with open(path, "w") as f:
        json.dump({"dataset": "raw", "classes": ["a", "b"], "channels": list(MICRO_LABELS[:channels]),
                   "trials": entries}, f)
    return path


def write_run_config(path, manifest, out_dir, framework="SN", cv="loso", max_epochs=3, extra=""):
    text = f"""[data]
manifest = {manifest}

[preprocess]
t_start = 0.0
t_end = 0.512
target_fs = 125

[split]
framework = {framework}
cv = {cv}
k = 2
seed = 0

[train]
max_epochs = {max_epochs}
batch_size = 8
early_stop_patience = 50
seed = 0
model_seed = 0

[model]
{MICRO_MODEL_SECTION}

[output]
dir = {out_dir}
{extra}"""
    with open(path, "w") as f:
        f.write(text)
    return path
