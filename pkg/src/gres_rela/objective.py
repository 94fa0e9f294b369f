"""Training loss: mask, minimap and no-target cross-entropy terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DimensionError, InputError
from .rela import RelaOutput, cell_bounds

BCE_EPS = 1e-7


@dataclass
class GresSample:
    image: np.ndarray  # (h0, w0, 3) uint8
    expression: str
    m_gt: np.ndarray  # (h0, w0) bool
    e_gt: bool

    def __post_init__(self):
        if self.m_gt.shape != self.image.shape[:2]:
            raise DimensionError(f"mask {self.m_gt.shape} does not match image {self.image.shape[:2]}")
        if self.e_gt == bool(self.m_gt.any()):
            raise InputError("no-target flag must be set exactly when the mask is empty")


@dataclass(frozen=True)
class LossWeights:
    mask: float = 1.0
    minimap: float = 1.0
    no_target: float = 1.0


@dataclass
class LossBreakdown:
    l_mask: nc.Tensor
    l_minimap: nc.Tensor
    l_nt: nc.Tensor
    total: nc.Tensor
    weights: LossWeights

    def values(self) -> dict[str, float]:
        return {
            "mask": self.l_mask.item(),
            "minimap": self.l_minimap.item(),
            "nt": self.l_nt.item(),
            "total": self.total.item(),
        }


def cell_fractions(mask: np.ndarray, gh: int, gw: int) -> np.ndarray:
    """Foreground fraction of each cell of a gh x gw split, as a (gh, gw) array."""
    h0, w0 = mask.shape
    if gh > h0 or gw > w0 or gh < 1 or gw < 1:
        raise InputError(f"cannot split a {h0}x{w0} mask into {gh}x{gw} cells")
    m = mask.astype(np.int64)
    out = np.empty((gh, gw))
    for i, (r0, r1) in enumerate(cell_bounds(h0, gh)):
        for j, (c0, c1) in enumerate(cell_bounds(w0, gw)):
            out[i, j] = m[r0:r1, c0:c1].sum() / ((r1 - r0) * (c1 - c0))
    return out


def minimap_downsample(m_gt: np.ndarray, p: int) -> np.ndarray:
    """Soft p*p minimap target in row-major order."""
    if p < 1:
        raise InputError(f"grid side must be positive, got {p}")
    return cell_fractions(m_gt, p, p).reshape(-1)


def feature_target(m_gt: np.ndarray, h: int, w: int) -> np.ndarray:
    """Binary mask target at feature resolution (cell fraction >= 0.5)."""
    return (cell_fractions(m_gt, h, w) >= 0.5).astype(np.float64).reshape(-1)


def compute_loss(
    out: RelaOutput,
    sample: GresSample,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    p2 = out.x_r.shape[0]
    p = int(round(p2**0.5))
    l_mask = nc.bce(out.m, feature_target(sample.m_gt, out.h, out.w), BCE_EPS)
    l_minimap = nc.bce(out.x_r, minimap_downsample(sample.m_gt, p), BCE_EPS)
    l_nt = nc.bce(out.e, np.array(float(sample.e_gt)), BCE_EPS)
    total = nc.add(nc.scale(l_mask, weights.mask), nc.scale(l_minimap, weights.minimap))
    total = nc.add(total, nc.scale(l_nt, weights.no_target))
    return LossBreakdown(l_mask, l_minimap, l_nt, total, weights)
