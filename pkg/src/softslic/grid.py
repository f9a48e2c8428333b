"""Superpixel grid planning, pixel ownership, and candidate neighborhoods.

The clustering never considers all superpixels for a pixel: each pixel is
restricted to the 3x3 block of grid cells around the cell that owns it.
Everything here is computed once per image geometry and is immutable
afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Slot order of the 9 candidate cells: (dr, dc) row-major over
# {-1, 0, 1} x {-1, 0, 1}. Slot 4 is always the owning cell.
NEIGHBOR_OFFSETS = tuple(
    (dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
)
OWNER_SLOT = 4
SENTINEL = -1


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the initial superpixel grid over an n_w x n_h image.

    `owner[p]` is the id of the grid cell containing pixel p, with pixels
    indexed row-major (p = y * n_w + x) and cells row-major over the
    m_h x m_w grid.
    """

    n_w: int
    n_h: int
    m_w: int
    m_h: int
    owner: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.n_w * self.n_h

    @property
    def m(self) -> int:
        return self.m_w * self.m_h

    @property
    def cell_w(self) -> float:
        return self.n_w / self.m_w

    @property
    def cell_h(self) -> float:
        return self.n_h / self.m_h


@dataclass(frozen=True)
class NeighborTable:
    """Per-pixel table of the 9 candidate superpixels.

    idx: (n, 9) superpixel ids, SENTINEL where the cell falls outside the
    grid. valid: parallel boolean mask. Slot 4 holds the owning cell and is
    always valid. Within a row, valid ids are strictly increasing.
    """

    idx: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)
    m: int
    n_w: int
    n_h: int

    @property
    def n(self) -> int:
        return self.idx.shape[0]


@dataclass
class SuperpixelState:
    """Cluster centers (m, k) and the soft mass that produced them."""

    centers: np.ndarray
    mass: np.ndarray


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def plan_grid(n_w: int, n_h: int, m_target: int) -> GridSpec:
    """Choose grid dimensions near m_target and assign pixel ownership.

    The grid is factored proportionally to the image aspect ratio so cells
    stay near-square; the achieved cell count m_w * m_h may differ slightly
    from m_target. The last row/column of cells absorbs remainder pixels.
    """
    if n_w < 1 or n_h < 1:
        raise ValueError(f"image dims must be positive, got {n_w}x{n_h}")
    if not 1 <= m_target <= n_w * n_h:
        raise ValueError(
            f"m_target must be in [1, {n_w * n_h}], got {m_target}"
        )
    m_w = _round_half_up(np.sqrt(m_target * n_w / n_h))
    m_w = min(max(m_w, 1), n_w)
    m_h = _round_half_up(m_target / m_w)
    m_h = min(max(m_h, 1), n_h)

    cell_w = n_w / m_w
    cell_h = n_h / m_h
    col = np.minimum((np.arange(n_w) / cell_w).astype(np.int64), m_w - 1)
    row = np.minimum((np.arange(n_h) / cell_h).astype(np.int64), m_h - 1)
    owner = (row[:, None] * m_w + col[None, :]).ravel()
    return GridSpec(n_w=n_w, n_h=n_h, m_w=m_w, m_h=m_h, owner=owner)


def neighbor_table(spec: GridSpec) -> NeighborTable:
    """Build the fixed 9-candidate table from the initial cell ownership.

    The candidate set does not change between clustering iterations; it is
    derived once from the owning cell of each pixel.
    """
    r = spec.owner // spec.m_w
    c = spec.owner % spec.m_w
    n = spec.n
    idx = np.empty((n, 9), dtype=np.int64)
    valid = np.empty((n, 9), dtype=bool)
    for s, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        rr = r + dr
        cc = c + dc
        ok = (rr >= 0) & (rr < spec.m_h) & (cc >= 0) & (cc < spec.m_w)
        idx[:, s] = np.where(ok, rr * spec.m_w + cc, SENTINEL)
        valid[:, s] = ok
    return NeighborTable(idx=idx, valid=valid, m=spec.m, n_w=spec.n_w, n_h=spec.n_h)


def init_centers(feats: np.ndarray, spec: GridSpec) -> SuperpixelState:
    """Initial centers: per-cell mean of the pixel features.

    Every cell owns at least one pixel by construction, so the mean is
    always defined. Mass is the pixel count of the cell.
    """
    if feats.shape[0] != spec.n:
        raise ValueError(
            f"feature rows ({feats.shape[0]}) != pixel count ({spec.n})"
        )
    counts = np.bincount(spec.owner, minlength=spec.m).astype(np.float64)
    k = feats.shape[1]
    centers = np.empty((spec.m, k))
    for c in range(k):
        centers[:, c] = np.bincount(spec.owner, weights=feats[:, c], minlength=spec.m)
    centers /= counts[:, None]
    return SuperpixelState(centers=centers, mass=counts)
