"""Region-based relationship modeling.

A grid of P*P learnable region queries attends over the image feature to
collect region features (region-image attention). Those features then
exchange information with each other and with the words of the expression
(region-language attention). Each region yields a filter, which produces a
region mask against the mask feature, and a probability of containing a
target. The final mask is the probability-weighted aggregate of the region
masks. A separate head on the averaged region features scores whether the
expression refers to nothing at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoders import ImageFeature, MaskFeature, TextFeature
from .errors import ConfigError, ContractError, DimensionError

AGGREGATION_MODES = ("normalized", "literal")
NO_TARGET_MODES = ("classifier", "50pix")
WEIGHT_EPS = 1e-8
MIN_POSITIVE_PIXELS = 50


@dataclass(frozen=True)
class Variant:
    """Switches that swap parts of the block for the ablation baselines."""

    aggregation: str = "normalized"
    hard_split_pooling: bool = False
    disable_region_att: bool = False
    disable_language_att: bool = False
    baseline_fusion: bool = False

    def __post_init__(self):
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigError(f"unknown aggregation mode {self.aggregation!r}")
        if self.baseline_fusion and (self.disable_region_att or self.disable_language_att):
            raise ConfigError(
                "baseline_fusion already removes both attentions; "
                "do not combine it with disable_region_att/disable_language_att"
            )


@dataclass
class RelaOutput:
    m: nc.Tensor  # (H*W,)
    x_r: nc.Tensor  # (P*P,)
    e: nc.Tensor  # ()
    m_r: nc.Tensor  # (P*P, H*W)
    a_ri: nc.Tensor  # (P*P, H*W)
    a_l: nc.Tensor | None  # (P*P, N_t); None when the language attention is ablated
    h: int
    w: int
    f_r: nc.Tensor | None = None
    f_f: nc.Tensor | None = None


def init_rela_params(params: nc.ParamSet, rng: np.random.Generator, *, channels: int, regions: int) -> None:
    c = channels
    params.weight("queries.q_r", (regions * regions, c), rng)
    params.weight("ria.w_ik", (c, c), rng)
    params.weight("ria.w_iv", (c, c), rng)
    params.weight("ria.filter_w", (c, c), rng)
    params.bias("ria.filter_b", c)
    for n in ("wq", "wk", "wv", "w_lq", "w_lk"):
        params.weight(f"rla.{n}", (c, c), rng)
    params.weight("rla.mlp_w1", (c, c), rng)
    params.bias("rla.mlp_b1", c)
    params.weight("rla.mlp_w2", (c, c), rng)
    params.bias("rla.mlp_b2", c)
    params.weight("heads.minimap_w", (c, 1), rng)
    params.bias("heads.minimap_b", 1)
    params.weight("heads.nt_w", (c, 1), rng)
    params.bias("heads.nt_b", 1)


def grid_of(params: nc.ParamSet) -> int:
    n = params["queries.q_r"].shape[0]
    p = math.isqrt(n)
    if p * p != n:
        raise ContractError(f"region query count {n} is not a perfect square")
    return p


def _check_channels(op: str, a: nc.Tensor, b: nc.Tensor) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"{op}: channel mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- region-image attention


def ria_attention(q_r: nc.Tensor, f_i: ImageFeature, params: nc.ParamSet) -> nc.Tensor:
    """softmax(Q_r gelu(F_i W_ik)^T), no temperature."""
    _check_channels("ria_attention", q_r, f_i.tensor)
    keys = nc.gelu(nc.matmul(f_i.tensor, params["ria.w_ik"]))
    return nc.softmax_rows(nc.matmul(q_r, nc.transpose(keys)))


def ria_collect(a_ri: nc.Tensor, f_i: ImageFeature, params: nc.ParamSet) -> nc.Tensor:
    if a_ri.shape[1] != f_i.tensor.shape[0]:
        raise DimensionError(f"ria_collect: attention {a_ri.shape} vs image feature {f_i.tensor.shape}")
    values = nc.gelu(nc.matmul(f_i.tensor, params["ria.w_iv"]))
    return nc.matmul(a_ri, values)


def cell_bounds(n: int, p: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into ``p`` near-equal spans; the remainder goes to the last span."""
    step = n // p
    return [(k * step, (k + 1) * step if k < p - 1 else n) for k in range(p)]


def pooling_matrix(h: int, w: int, p: int) -> np.ndarray:
    """Row-stochastic (p*p, h*w) matrix averaging each cell of a p x p hard split."""
    if p > min(h, w):
        raise ConfigError(f"cannot split a {h}x{w} grid into {p}x{p} cells")
    out = np.zeros((p * p, h * w))
    for i, (r0, r1) in enumerate(cell_bounds(h, p)):
        for j, (c0, c1) in enumerate(cell_bounds(w, p)):
            cell = np.zeros((h, w))
            cell[r0:r1, c0:c1] = 1.0
            out[i * p + j] = cell.reshape(-1) / cell.sum()
    return out


def region_filter(f_r_prime: nc.Tensor, params: nc.ParamSet) -> nc.Tensor:
    return nc.add_row(nc.matmul(f_r_prime, params["ria.filter_w"]), params["ria.filter_b"])


# ---------------------------------------------------------------- region-language attention


def rla_self_attention(f_r_prime: nc.Tensor, params: nc.ParamSet) -> nc.Tensor:
    c = f_r_prime.shape[1]
    q = nc.matmul(f_r_prime, params["rla.wq"])
    k = nc.matmul(f_r_prime, params["rla.wk"])
    v = nc.matmul(f_r_prime, params["rla.wv"])
    att = nc.softmax_rows(nc.scale(nc.matmul(q, nc.transpose(k)), 1.0 / math.sqrt(c)))
    return nc.matmul(att, v)


def rla_cross_attention(
    f_r_prime: nc.Tensor, f_t: TextFeature, params: nc.ParamSet
) -> tuple[nc.Tensor, nc.Tensor]:
    """Word-region attention A_l and the language-aware region features A_l F_t."""
    _check_channels("rla_cross_attention", f_r_prime, f_t.tensor)
    q = nc.gelu(nc.matmul(f_r_prime, params["rla.w_lq"]))
    k = nc.gelu(nc.matmul(f_t.tensor, params["rla.w_lk"]))
    a_l = nc.softmax_rows(nc.matmul(q, nc.transpose(k)))
    return a_l, nc.matmul(a_l, f_t.tensor)


def pointwise_language(f_r_prime: nc.Tensor, f_t: TextFeature) -> nc.Tensor:
    """Region features times the sentence-averaged word feature (baseline fusion)."""
    _check_channels("pointwise_language", f_r_prime, f_t.tensor)
    return nc.mul_row(f_r_prime, nc.mean_rows(f_t.tensor))


def fusion_mlp(x: nc.Tensor, params: nc.ParamSet) -> nc.Tensor:
    h = nc.gelu(nc.add_row(nc.matmul(x, params["rla.mlp_w1"]), params["rla.mlp_b1"]))
    return nc.add_row(nc.matmul(h, params["rla.mlp_w2"]), params["rla.mlp_b2"])


def rla_fuse(f_r_prime: nc.Tensor, f_r1: nc.Tensor, f_r2: nc.Tensor, params: nc.ParamSet) -> nc.Tensor:
    return fusion_mlp(nc.add(nc.add(f_r_prime, f_r1), f_r2), params)


# ---------------------------------------------------------------- outputs


def region_masks(f_f: nc.Tensor, f_m: MaskFeature) -> nc.Tensor:
    _check_channels("region_masks", f_f, f_m.tensor)
    return nc.sigmoid(nc.matmul(f_f, nc.transpose(f_m.tensor)))


def minimap_head(f_r: nc.Tensor, params: nc.ParamSet) -> nc.Tensor:
    logits = nc.add_row(nc.matmul(f_r, params["heads.minimap_w"]), params["heads.minimap_b"])
    return nc.reshape(nc.sigmoid(logits), (f_r.shape[0],))


def no_target_head(f_r: nc.Tensor, params: nc.ParamSet) -> nc.Tensor:
    pooled = nc.reshape(nc.mean_rows(f_r), (1, f_r.shape[1]))
    logit = nc.add_row(nc.matmul(pooled, params["heads.nt_w"]), params["heads.nt_b"])
    return nc.reshape(nc.sigmoid(logit), ())


def aggregate_mask(x_r: nc.Tensor, m_r: nc.Tensor, mode: str = "normalized") -> nc.Tensor:
    """Weight region masks by their target probabilities and sum.

    ``normalized`` divides the weights by their total (+1e-8) so the result is a
    convex combination; ``literal`` keeps the plain weighted sum clamped at 1.
    """
    n = x_r.shape[0]
    if m_r.shape[0] != n:
        raise DimensionError(f"aggregate_mask: {n} weights for {m_r.shape[0]} region masks")
    if np.any(x_r.data < 0):
        raise ContractError("aggregate_mask: region weights must be non-negative")
    row = nc.reshape(x_r, (1, n))
    if mode == "normalized":
        row = nc.div_scalar(row, nc.add_const(nc.sum_all(x_r), WEIGHT_EPS))
        out = nc.matmul(row, m_r)
    elif mode == "literal":
        out = nc.minimum_const(nc.matmul(row, m_r), 1.0)
    else:
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    return nc.reshape(out, (m_r.shape[1],))


def forward(
    f_i: ImageFeature,
    f_t: TextFeature,
    f_m: MaskFeature,
    params: nc.ParamSet,
    variant: Variant = Variant(),
) -> RelaOutput:
    q_r = params["queries.q_r"]
    p = grid_of(params)
    if variant.hard_split_pooling:
        a_ri = nc.Tensor(pooling_matrix(f_i.h, f_i.w, p))
    else:
        a_ri = ria_attention(q_r, f_i, params)
    f_r_prime = ria_collect(a_ri, f_i, params)
    f_f = region_filter(f_r_prime, params)

    a_l = None
    if variant.baseline_fusion:
        f_r = fusion_mlp(pointwise_language(f_r_prime, f_t), params)
    else:
        if variant.disable_region_att:
            f_r1 = nc.Tensor(np.zeros(f_r_prime.shape))
        else:
            f_r1 = rla_self_attention(f_r_prime, params)
        if variant.disable_language_att:
            f_r2 = pointwise_language(f_r_prime, f_t)
        else:
            a_l, f_r2 = rla_cross_attention(f_r_prime, f_t, params)
        f_r = rla_fuse(f_r_prime, f_r1, f_r2, params)

    x_r = minimap_head(f_r, params)
    e = no_target_head(f_r, params)
    m_r = region_masks(f_f, f_m)
    m = aggregate_mask(x_r, m_r, variant.aggregation)
    return RelaOutput(m=m, x_r=x_r, e=e, m_r=m_r, a_ri=a_ri, a_l=a_l, h=f_i.h, w=f_i.w, f_r=f_r, f_f=f_f)


def upsample_nearest(mask: np.ndarray, h0: int, w0: int) -> np.ndarray:
    h, w = mask.shape
    rows = (np.arange(h0) * h) // h0
    cols = (np.arange(w0) * w) // w0
    return mask[rows][:, cols]


def predict(
    out: RelaOutput,
    image_h0: int,
    image_w0: int,
    mode: str = "classifier",
    mask_threshold: float = 0.5,
    nt_threshold: float = 0.5,
) -> tuple[np.ndarray, bool]:
    """Binary (h0, w0) mask and the no-target decision for one output."""
    if mode not in NO_TARGET_MODES:
        raise ConfigError(f"unknown no-target mode {mode!r}")
    if mode == "classifier" and out.e.item() >= nt_threshold:
        return np.zeros((image_h0, image_w0), dtype=bool), True
    coarse = out.m.data.reshape(out.h, out.w) >= mask_threshold
    full = upsample_nearest(coarse, image_h0, image_w0)
    if mode == "50pix" and int(full.sum()) < MIN_POSITIVE_PIXELS:
        return np.zeros((image_h0, image_w0), dtype=bool), True
    return full, False
