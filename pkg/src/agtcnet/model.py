"""AGTCNet: temporal conv -> graph attention -> spatial pooling -> temporal conv -> attention -> classifier.

Layout is channels-last ``(B, electrodes, time, features)`` throughout.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .autodiff import (
    BatchNormState,
    LayerParam,
    MaxNorm,
    MinMax,
    RngStream,
    Tensor,
    add,
    avg_pool,
    batch_norm,
    concat,
    conv2d,
    depthwise_conv2d,
    dropout,
    glorot_uniform,
    kernel_fans,
    linear,
    matmul,
    multi_head_attention,
    positional_encoding,
    prelu,
    reshape,
    scaled_add,
    selu,
    separable_conv2d,
    softmax,
    transpose,
)
from .electrode_graph import AdjacencyGraph


class ShapeError(ValueError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class ModelConfig:
    num_channels: int = 22
    num_samples: int = 375
    num_classes: int = 4
    ctc_filters: int = 8
    ctc_kernel: int = 32
    ctc_pool: int = 4
    ctc_pool_stride: int = 2
    gcat_heads: int = 2
    gcat_out_features: int = 16
    gcat_kernel: int = 8
    attn_kernel: int = 2
    ds_depth: int = 4
    gcap_depth: int = 2
    gtc_filters: int = 96
    gtc_kernel: int = 8
    gtc_pool: int = 4
    tce_kernel: int = 2
    mha_heads: int = 2
    mha_key_dim: int = 8
    gcat_dropout: float = 0.25
    attn_dropout: float = 0.2
    gtc_dropout: float = 0.25
    mha_dropout: float = 0.6
    mha_out_dropout: float = 0.3
    tce_dropout: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and (not isinstance(v, (int, np.integer)) or v <= 0):
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")
            if f.type == "float" and not 0.0 <= v < 1.0:
                raise ValueError(f"{f.name} must be a dropout rate in [0, 1), got {v!r}")
        if self.gtc_filters % 2:
            raise ValueError("gtc_filters must be even for the sinusoidal position table")

    @classmethod
    def int_fields(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.type == "int"]

    @classmethod
    def float_fields(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.type == "float"]

    @property
    def gcat_features(self) -> int:
        return self.ctc_filters + self.gcat_out_features

    @property
    def gcap_features(self) -> int:
        return self.gcat_features * self.gcap_depth

    def temporal_sizes(self) -> dict[str, int]:
        """Time-axis length after each stage; raises ShapeError if any collapses."""
        t_conv = self.num_samples - self.ctc_kernel + 1
        if t_conv < self.ctc_pool:
            raise ShapeError(
                "ctc",
                f"{self.num_samples} samples too short for a {self.ctc_kernel}-tap conv "
                f"and {self.ctc_pool}-wide pool (need >= {self.ctc_kernel + self.ctc_pool - 1})",
            )
        t1 = (t_conv - self.ctc_pool) // self.ctc_pool_stride + 1
        p = self.gtc_pool
        if t1 < p:
            raise ShapeError("gtc", f"temporal length {t1} shorter than pool {p}")
        t_mid = (t1 - p) // p + 1
        if t_mid < p:
            raise ShapeError("gtc", f"temporal length {t_mid} shorter than pool {p}")
        return {"ctc.conv": t_conv, "ctc": t1, "gtc.conv": t_mid, "gtc": (t_mid - p) // p + 1}


@dataclass
class ModelState:
    config: ModelConfig
    params: dict  # name -> LayerParam, in construction order
    bn: dict  # site -> BatchNormState
    adjacency: AdjacencyGraph

    def tensor(self, name: str) -> Tensor:
        return self.params[name].tensor

    def param_list(self) -> list[LayerParam]:
        return list(self.params.values())

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


@dataclass
class EdgeAttention:
    """Pre-dropout attention weights, shaped (B, heads, C_i, C_j, T)."""

    alpha: np.ndarray
    mask: np.ndarray  # (C, C) bool, neighbours plus self


@dataclass
class ForwardResult:
    logits: Tensor
    attention: EdgeAttention
    shapes: dict = field(default_factory=dict)  # stage -> per-example shape

    @property
    def probs(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


# parameter layout -------------------------------------------------------------


def _separable(specs, name, fin, fout, k, depth):
    specs.append((f"{name}.depthwise", (1, k, fin, depth), "glorot", None))
    specs.append((f"{name}.pointwise", (1, 1, fin * depth, fout), "glorot", None))


def _bn(specs, sites, name, features):
    specs.append((f"{name}.gamma", (features,), "ones", None))
    specs.append((f"{name}.beta", (features,), "zeros", None))
    sites.append((name, features))


def parameter_layout(cfg: ModelConfig):
    """(name, shape, init, constraint) per trainable tensor plus (site, features) per BN."""
    specs, sites = [], []
    t2 = cfg.temporal_sizes()["gtc"]
    fc, fg, dep = cfg.ctc_filters, cfg.gcat_out_features, cfg.ds_depth

    specs.append(("ctc.conv.kernel", (1, cfg.ctc_kernel, 1, fc), "glorot", None))
    _bn(specs, sites, "ctc.bn", fc)

    for h in range(cfg.gcat_heads):
        p = f"gcat.head{h}"
        _separable(specs, f"{p}.weight", fc, fg, cfg.gcat_kernel, dep)
        _bn(specs, sites, f"{p}.weight.bn", fg)
        for side in ("src", "dst"):
            _separable(specs, f"{p}.{side}", fg, 1, cfg.attn_kernel, dep)
            _bn(specs, sites, f"{p}.{side}.bn", 1)
        specs.append((f"{p}.prelu.alpha", (1,), "zeros", None))
        _separable(specs, f"{p}.value", fc, fg, cfg.gcat_kernel, dep)
        _bn(specs, sites, f"{p}.value.bn", fg)
    specs.append(("gcat.bias", (fg,), "zeros", None))
    _bn(specs, sites, "gcat.bn", fg)

    fin = cfg.gcat_features
    specs.append(
        ("gcap.depthwise", (cfg.num_channels, 1, fin, cfg.gcap_depth), "glorot", MaxNorm(1.0, 0))
    )
    _bn(specs, sites, "gcap.bn", cfg.gcap_features)

    d = cfg.gtc_filters
    _separable(specs, "gtc.conv", cfg.gcap_features, d, cfg.gtc_kernel, dep)
    _bn(specs, sites, "gtc.bn", d)

    specs.append(("tce.pe.scale", (1,), "zeros", MinMax(0.0, 1.0)))
    hk = cfg.mha_heads * cfg.mha_key_dim
    for proj in ("query", "key", "value"):
        specs.append((f"tce.mha.{proj}.kernel", (d, hk), "glorot", None))
        specs.append((f"tce.mha.{proj}.bias", (hk,), "zeros", None))
    specs.append(("tce.mha.output.kernel", (hk, d), "glorot", None))
    specs.append(("tce.mha.output.bias", (d,), "zeros", None))
    _bn(specs, sites, "tce.mha.bn", d)
    _separable(specs, "tce.conv", d, d, cfg.tce_kernel, dep)
    _bn(specs, sites, "tce.conv.bn", d)

    specs.append(("classifier.kernel", (t2 * d, cfg.num_classes), "glorot", MaxNorm(0.25, 0)))
    specs.append(("classifier.bias", (cfg.num_classes,), "zeros", None))
    return specs, sites


def build_model(cfg: ModelConfig, adjacency: AdjacencyGraph, seed: int = 0) -> ModelState:
    c = len(adjacency.labels)
    if c != cfg.num_channels:
        raise ShapeError("gcat", f"adjacency has {c} nodes, config expects {cfg.num_channels}")
    specs, sites = parameter_layout(cfg)
    root = RngStream(seed)
    params = {}
    for name, shape, init, constraint in specs:
        if init == "glorot":
            t = glorot_uniform(shape, *kernel_fans(shape), root.substream("init", name))
        elif init == "ones":
            t = Tensor(np.ones(shape), requires_grad=True)
        else:
            t = Tensor(np.zeros(shape), requires_grad=True)
        t.name = name
        params[name] = LayerParam(name, t, constraint)
    bn = {site: BatchNormState(n) for site, n in sites}
    return ModelState(cfg, params, bn, adjacency)


# stages -------------------------------------------------------------------------


def _sep(m: ModelState, x, name):
    return separable_conv2d(x, m.tensor(f"{name}.depthwise"), m.tensor(f"{name}.pointwise"),
                            padding="same")


def _norm(m: ModelState, x, site, mode):
    return batch_norm(x, m.tensor(f"{site}.gamma"), m.tensor(f"{site}.beta"), m.bn[site], mode)


def ctc_forward(m: ModelState, x: Tensor, mode: str, shapes: Optional[dict] = None) -> Tensor:
    cfg = m.config
    cfg.temporal_sizes()
    h = conv2d(x, m.tensor("ctc.conv.kernel"), padding="valid")
    if shapes is not None:
        shapes["ctc.conv"] = h.shape[1:]
    h = _norm(m, h, "ctc.bn", mode)
    return avg_pool(h, (1, cfg.ctc_pool), (1, cfg.ctc_pool_stride))


def attention_mask(adjacency: AdjacencyGraph) -> np.ndarray:
    a = np.asarray(adjacency.matrix, dtype=bool)
    return a | np.eye(a.shape[0], dtype=bool)


def gcat_forward(m: ModelState, x: Tensor, mode: str, rng=None):
    """One-hop graph attention with per-head temporal-conv projections.

    Returns the input concatenated with the aggregated messages, plus the
    attention weights of every head.
    """
    cfg = m.config
    b, c, t, f = x.shape
    if m.adjacency.matrix.shape != (c, c):
        raise ShapeError("gcat", f"adjacency {m.adjacency.matrix.shape} does not match {c} channels")
    if f != cfg.ctc_filters:
        raise ShapeError("gcat", f"expected {cfg.ctc_filters} input features, got {f}")
    mask = attention_mask(m.adjacency)
    bmask = mask[None, :, :, None]
    messages, alphas = [], []
    for h in range(cfg.gcat_heads):
        p = f"gcat.head{h}"
        z = selu(_norm(m, _sep(m, x, f"{p}.weight"), f"{p}.weight.bn", mode))
        src = selu(_norm(m, _sep(m, z, f"{p}.src"), f"{p}.src.bn", mode))
        dst = selu(_norm(m, _sep(m, z, f"{p}.dst"), f"{p}.dst.bn", mode))
        # e[b, i, j, t] = s_i(t) + d_j(t)
        e = add(reshape(src, (b, c, 1, t)), reshape(dst, (b, 1, c, t)))
        e = prelu(e, m.tensor(f"{p}.prelu.alpha"))
        alpha = softmax(e, axis=2, mask=bmask)
        alphas.append(alpha.data)
        alpha = dropout(alpha, cfg.attn_dropout, mode, rng)
        v = selu(_norm(m, _sep(m, x, f"{p}.value"), f"{p}.value.bn", mode))
        msg = matmul(transpose(alpha, (0, 3, 1, 2)), transpose(v, (0, 2, 1, 3)))
        messages.append(transpose(msg, (0, 2, 1, 3)))
    agg = messages[0]
    for msg in messages[1:]:
        agg = add(agg, msg)
    agg = agg * (1.0 / cfg.gcat_heads)
    out = selu(add(agg, m.tensor("gcat.bias")))
    out = _norm(m, out, "gcat.bn", mode)
    out = dropout(out, cfg.gcat_dropout, mode, rng)
    return concat([x, out], axis=-1), EdgeAttention(np.stack(alphas, axis=1), mask)


def gcap_forward(m: ModelState, x: Tensor, mode: str) -> Tensor:
    cfg = m.config
    if x.shape[1] != cfg.num_channels or x.shape[3] != cfg.gcat_features:
        raise ShapeError(
            "gcap", f"expected (*, {cfg.num_channels}, T, {cfg.gcat_features}), got {x.shape}"
        )
    h = depthwise_conv2d(x, m.tensor("gcap.depthwise"), padding="valid")
    return selu(_norm(m, h, "gcap.bn", mode))


def gtc_forward(m: ModelState, x: Tensor, mode: str, rng=None, shapes: Optional[dict] = None):
    cfg = m.config
    p = cfg.gtc_pool
    if x.shape[2] < p:
        raise ShapeError("gtc", f"temporal length {x.shape[2]} shorter than pool {p}")
    h = dropout(avg_pool(x, (1, p), (1, p)), cfg.gtc_dropout, mode, rng)
    h = selu(_norm(m, _sep(m, h, "gtc.conv"), "gtc.bn", mode))
    if shapes is not None:
        shapes["gtc.conv"] = h.shape[1:]
    if h.shape[2] < p:
        raise ShapeError("gtc", f"temporal length {h.shape[2]} shorter than pool {p}")
    return dropout(avg_pool(h, (1, p), (1, p)), cfg.gtc_dropout, mode, rng)


def tce_forward(m: ModelState, x: Tensor, mode: str, rng=None) -> Tensor:
    cfg = m.config
    b, _, t, d = x.shape
    y0 = scaled_add(x, positional_encoding(t, d), m.tensor("tce.pe.scale"))
    seq = reshape(y0, (b, t, d))
    mha = {k: m.tensor(f"tce.mha.{k}") for k in (
        "query.kernel", "query.bias", "key.kernel", "key.bias",
        "value.kernel", "value.bias", "output.kernel", "output.bias")}
    att = multi_head_attention(seq, seq, seq, mha, cfg.mha_heads, cfg.mha_key_dim,
                               cfg.mha_key_dim, cfg.mha_dropout, mode, rng)
    att = _norm(m, reshape(att, (b, 1, t, d)), "tce.mha.bn", mode)
    y1 = add(y0, dropout(att, cfg.mha_out_dropout, mode, rng))
    h = selu(_norm(m, _sep(m, y1, "tce.conv"), "tce.conv.bn", mode))
    return add(y1, dropout(h, cfg.tce_dropout, mode, rng))


def classify_logits(m: ModelState, x: Tensor) -> Tensor:
    flat = reshape(x, (x.shape[0], -1))
    return linear(flat, m.tensor("classifier.kernel"), m.tensor("classifier.bias"))


def classify(m: ModelState, x: Tensor) -> Tensor:
    return softmax(classify_logits(m, x), axis=-1)


def forward(m: ModelState, batch, mode: str = "infer", rng: Optional[RngStream] = None) -> ForwardResult:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an RngStream for dropout")
    cfg = m.config
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float64))
    expected = (cfg.num_channels, cfg.num_samples, 1)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError("input", f"expected (B, {', '.join(map(str, expected))}), got {x.shape}")
    shapes = {}
    h = ctc_forward(m, x, mode, shapes)
    shapes["ctc"] = h.shape[1:]
    h, attention = gcat_forward(m, h, mode, rng)
    shapes["gcat"] = h.shape[1:]
    h = gcap_forward(m, h, mode)
    shapes["gcap"] = h.shape[1:]
    h = gtc_forward(m, h, mode, rng, shapes)
    shapes["gtc"] = h.shape[1:]
    h = tce_forward(m, h, mode, rng)
    shapes["tce"] = h.shape[1:]
    logits = classify_logits(m, h)
    shapes["logits"] = logits.shape[1:]
    return ForwardResult(logits, attention, shapes)


def predict_proba(m: ModelState, batch, batch_size: int = 64) -> np.ndarray:
    """Infer-mode class probabilities, evaluated in chunks."""
    batch = np.asarray(batch, dtype=np.float64)
    out = [forward(m, batch[i:i + batch_size], "infer").probs
           for i in range(0, len(batch), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, m.config.num_classes))


# accounting -------------------------------------------------------------------


@dataclass
class ParamCount:
    total: int
    trainable: int
    running_stats: int
    by_stage: dict
    by_tensor: dict

    def report(self) -> str:
        lines = [f"{'stage':<12}{'count':>10}"]
        lines += [f"{k:<12}{v:>10,}" for k, v in self.by_stage.items()]
        lines.append(f"{'trainable':<12}{self.trainable:>10,}")
        lines.append(f"{'bn running':<12}{self.running_stats:>10,}")
        lines.append(f"{'total':<12}{self.total:>10,}")
        return "\n".join(lines)


def param_count(m: ModelState) -> ParamCount:
    """Trainable sizes plus BN moving mean/variance, grouped by stage."""
    by_tensor = {name: p.size for name, p in m.params.items()}
    for site, st in m.bn.items():
        by_tensor[f"{site}.moving_mean"] = st.moving_mean.size
        by_tensor[f"{site}.moving_var"] = st.moving_var.size
    by_stage = {}
    for name, n in by_tensor.items():
        stage = name.split(".", 1)[0]
        by_stage[stage] = by_stage.get(stage, 0) + n
    trainable = sum(p.size for p in m.params.values())
    total = sum(by_tensor.values())
    return ParamCount(total, trainable, total - trainable, by_stage, by_tensor)
