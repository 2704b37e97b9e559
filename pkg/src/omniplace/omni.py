"""Panorama-specific operators.

Equirectangular images wrap horizontally, so convolutions pad the left
edge with the rightmost columns and vice versa. At the poles (top and
bottom rows) the sphere continues into the same edge rotated by half the
width, which is what ``pole_wrap`` implements. Roll branching enumerates
all cyclic column shifts of a feature map; comparing one map's shifts
against another gives a rotation-searched distance whose argmin estimates
the relative heading between the two views.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, _accum, _node, roll, sqrt

__all__ = [
    "PadMode",
    "RollBranchOutput",
    "RollingDistance",
    "pad2d",
    "circular_pad",
    "roll_branch",
    "rolling_l2",
    "rolling_distance",
    "gaussian_rotation_mask",
]


@dataclass(frozen=True)
class PadMode:
    """Circular horizontal padding; vertical is "zero" or "pole_wrap"."""

    vertical: str = "pole_wrap"
    amounts: tuple = (1, 1, 1, 1)  # top, bottom, left, right

    def __post_init__(self):
        if self.vertical not in ("zero", "pole_wrap"):
            raise ValueError(f"unknown vertical pad mode {self.vertical!r}")
        if any(a < 0 for a in self.amounts):
            raise ValueError(f"pad amounts must be >= 0, got {self.amounts}")


def _pad_index_maps(H, W, mode):
    """Source row/column index arrays realising the circular pad gather.

    Every padded pixel copies exactly one source pixel (zero-mode
    top/bottom rows excepted): middle rows shift columns modulo W, pole
    rows reflect vertically and rotate by W/2.
    """
    top, bottom, left, right = mode.amounts
    if left >= W or right >= W:
        raise ValueError(f"horizontal pad {(left, right)} must be < width {W}")
    if top > H or bottom > H:
        raise ValueError(f"vertical pad {(top, bottom)} exceeds height {H}")
    if mode.vertical == "pole_wrap" and W % 2:
        raise ValueError("pole_wrap requires an even width")

    hp, wp = H + top + bottom, W + left + right
    rows = np.empty(hp, dtype=np.intp)
    half = np.zeros(hp, dtype=bool)  # rows needing the half-width rotation
    rows[top : top + H] = np.arange(H)
    if top:
        rows[:top] = top - 1 - np.arange(top)  # reflection: nearest pad row copies row 0
        half[:top] = True
    if bottom:
        rows[top + H :] = H - 1 - np.arange(bottom)
        half[top + H :] = True

    base_cols = (np.arange(wp) - left) % W
    cols = np.broadcast_to(base_cols, (hp, wp)).copy()
    cols[half] = (cols[half] + W // 2) % W
    return rows, cols


def pad2d(x: Tensor, mode: PadMode) -> Tensor:
    """Differentiable circular pad of an H x W x C tensor."""
    if x.data.ndim != 3:
        raise ValueError(f"pad2d expects H x W x C, got {x.shape}")
    H, W, C = x.shape
    top, bottom, left, right = mode.amounts
    rows, cols = _pad_index_maps(H, W, mode)
    padded = x.data[rows[:, None], cols]
    if mode.vertical == "zero":
        if top:
            padded[:top] = 0
        if bottom:
            padded[top + H :] = 0
    out = _node(padded, (x,))

    def backward():
        g = out.grad
        gx = np.zeros_like(x.data)
        if mode.vertical == "zero":
            sl = slice(top, top + H)
            np.add.at(gx, (rows[sl, None], cols[sl]), g[sl])
        else:
            np.add.at(gx, (rows[:, None], cols), g)
        _accum(x, gx)

    out._backward = backward
    return out


def circular_pad(x: Tensor, mode: PadMode) -> Tensor:
    """Spec name for pad2d."""
    return pad2d(x, mode)


@dataclass
class RollBranchOutput:
    """All cyclic left shifts of a feature map along its width axis."""

    branches: list = field(default_factory=list)
    width: int = 0


def _width_axis(shape):
    # feature maps are (w, d) or (h, w, d); images (H, W, C): width is
    # always the second-to-last axis
    if len(shape) < 2:
        raise ValueError(f"need at least 2 dims to roll, got shape {shape}")
    return len(shape) - 2


def roll_branch(z: Tensor) -> RollBranchOutput:
    """branches[k] is z shifted left by k columns; branches[0] is z."""
    axis = _width_axis(z.shape)
    w = z.shape[axis]
    return RollBranchOutput(branches=[roll(z, k, axis) for k in range(w)], width=w)


def rolling_sqdists(a: Tensor, b: Tensor) -> Tensor:
    """Vector of squared distances ||shift_k(a) - b||^2 for k = 0..w-1."""
    if a.shape != b.shape:
        raise ValueError(f"rolling distance: shape mismatch {a.shape} vs {b.shape}")
    axis = _width_axis(a.shape)
    w = a.shape[axis]
    shifted = np.stack([np.roll(a.data, -k, axis=axis) for k in range(w)])
    diff = shifted - b.data[None]
    sq = (diff * diff).reshape(w, -1).sum(axis=1)
    out = _node(sq, (a, b))

    def backward():
        g = out.grad  # (w,)
        weighted = 2.0 * g.reshape((w,) + (1,) * (diff.ndim - 1)) * diff
        ga = np.zeros_like(a.data)
        for k in range(w):
            ga += np.roll(weighted[k], k, axis=axis)
        _accum(a, ga)
        _accum(b, -weighted.sum(axis=0))

    out._backward = backward
    return out


def rolling_l2(a: Tensor, b: Tensor) -> Tensor:
    """Differentiable rolling distances: sqrt of rolling_sqdists."""
    return sqrt(rolling_sqdists(a, b))


@dataclass(frozen=True)
class RollingDistance:
    """Distances over all relative shifts, their min and the argmin shift."""

    distances: np.ndarray
    d_min: float
    r_hat: int


def rolling_distance(zi, zj) -> RollingDistance:
    """Rotation-searched L2 distance between two feature maps.

    distances[k] = ||shift_k(zi) - zj||_2 over the flattened maps; d_min
    is the minimum and r_hat its first-attaining shift (ties break to the
    smallest k).
    """
    ai = zi.data if isinstance(zi, Tensor) else np.asarray(zi)
    aj = zj.data if isinstance(zj, Tensor) else np.asarray(zj)
    if ai.shape != aj.shape:
        raise ValueError(f"rolling distance: shape mismatch {ai.shape} vs {aj.shape}")
    axis = _width_axis(ai.shape)
    w = ai.shape[axis]
    shifted = np.stack([np.roll(ai, -k, axis=axis) for k in range(w)])
    diff = (shifted - aj[None]).reshape(w, -1)
    dists = np.sqrt((diff * diff).sum(axis=1))
    k = int(dists.argmin())
    return RollingDistance(distances=dists, d_min=float(dists[k]), r_hat=k)


def gaussian_rotation_mask(r_ij: int, w: int, sigma: float = 1.0) -> np.ndarray:
    """Circular discretised Gaussian over w rotation bins, centred at r_ij.

    Bin distance wraps (min(|k-r|, w-|k-r|)); the mask sums to 1. Sigma
    at or below 1e-6 degenerates to a one-hot at r_ij.
    """
    if w < 1:
        raise ValueError(f"need at least one rotation bin, got w={w}")
    if not 0 <= r_ij < w:
        raise ValueError(f"rotation bin {r_ij} outside [0, {w})")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma <= 1e-6:  # treated as the sigma -> 0 limit
        g = np.zeros(w)
        g[r_ij] = 1.0
        return g
    k = np.arange(w)
    delta = np.abs(k - r_ij)
    delta = np.minimum(delta, w - delta)
    g = np.exp(-0.5 * (delta / sigma) ** 2)
    return g / g.sum()
