"""Forward superpixel clustering.

Implements both the classic hard assign/update iteration and its soft
relaxation where the nearest-neighbor step is replaced by exponential
distance weights, making the whole loop differentiable. Also provides the
pixel<->superpixel mapping algebra built on the soft association matrix,
hard label extraction, and connectivity enforcement.

Internally the hot loop runs in a padded per-cell layout: pixels are grouped
by their owning grid cell, so distances and weighted reductions become small
dense matrix products batched over cells. Public operations accept arbitrary
neighbor tables and fall back to a plain gather/scatter path when the table
is not cell-uniform (every pixel of a cell sharing the cell's candidate
row), which only hand-built fixtures ever are.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .grid import (
    OWNER_SLOT,
    SENTINEL,
    GridSpec,
    NeighborTable,
    SuperpixelState,
    init_centers,
    neighbor_table,
)

# Guard on soft-mass denominators: clusters can lose all weight at image
# borders and the map must stay total and differentiable.
EPS_MASS = 1e-8

# exp() arguments below this produce subnormals (slow) or zero; such weights
# are flushed to exact zero. exp(-708) ~ 3e-308 is still a normal double, so
# everything kept is well-formed.
EXP_FLOOR = -708.0


class NumericError(ValueError):
    """Raised when inputs contain non-finite values."""


@dataclass
class Association:
    """Soft pixel-superpixel weights restricted to the 9 candidate slots.

    q: (n, 9) non-negative weights, exactly zero on invalid slots.
    col_mass: (m,) per-superpixel total weight.
    """

    q: np.ndarray = field(repr=False)
    nbr: NeighborTable
    col_mass: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.nbr.m


@dataclass
class LabelMap:
    """Hard per-pixel superpixel ids over an n_w x n_h image."""

    labels: np.ndarray
    n_w: int
    n_h: int
    connected: bool = False

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def grid(self) -> np.ndarray:
        return self.labels.reshape(self.n_h, self.n_w)


def make_association(q: np.ndarray, nbr: NeighborTable) -> Association:
    """Wrap raw weights into an Association, zeroing invalid slots."""
    q = np.where(nbr.valid, np.asarray(q, dtype=np.float64), 0.0)
    flat = _idx_safe(nbr).ravel()
    col_mass = np.bincount(flat, weights=q.ravel(), minlength=nbr.m)
    return Association(q=q, nbr=nbr, col_mass=col_mass)


def _idx_safe(nbr: NeighborTable) -> np.ndarray:
    return np.where(nbr.valid, nbr.idx, 0)


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# padded per-cell layout


@dataclass
class _CellLayout:
    """Pixels regrouped by owning cell, padded to the largest cell."""

    uniform: bool
    n: int
    m: int
    pmax: int
    order: np.ndarray          # (n,) pixel ids sorted by owner
    cell_of_sorted: np.ndarray  # (n,) owner of order[i]
    rows: np.ndarray           # (n,) slot of order[i] inside its cell
    counts: np.ndarray         # (m,) pixels per cell
    cell_idx_safe: np.ndarray  # (m, 9) candidate ids, 0 where invalid
    cell_valid: np.ndarray     # (m, 9)
    pad_inf: np.ndarray        # (m, pmax, 9), +inf on padding and invalid slots

    @classmethod
    def build(cls, nbr: NeighborTable) -> "_CellLayout":
        owner = nbr.idx[:, OWNER_SLOT]
        n, m = nbr.n, nbr.m
        counts = np.bincount(owner, minlength=m)
        order = np.argsort(owner, kind="stable")
        starts = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(counts, out=starts[1:])
        cell_of_sorted = owner[order]
        rows = np.arange(n, dtype=np.int64) - starts[cell_of_sorted]
        pmax = int(counts.max()) if n else 0

        cell_idx = np.full((m, 9), SENTINEL, dtype=np.int64)
        cell_valid = np.zeros((m, 9), dtype=bool)
        nonempty = counts > 0
        first = order[np.minimum(starts[:-1], n - 1)]
        cell_idx[nonempty] = nbr.idx[first[nonempty]]
        cell_valid[nonempty] = nbr.valid[first[nonempty]]
        uniform = bool(
            np.array_equal(nbr.idx, cell_idx[owner])
            and np.array_equal(nbr.valid, cell_valid[owner])
        )

        mask = np.zeros((m, pmax), dtype=bool)
        mask[cell_of_sorted, rows] = True
        pad_inf = np.zeros((m, pmax, 9))
        pad_inf[~mask] = np.inf
        pad_inf[~np.broadcast_to(cell_valid[:, None, :], pad_inf.shape)] = np.inf

        return cls(
            uniform=uniform, n=n, m=m, pmax=pmax, order=order,
            cell_of_sorted=cell_of_sorted, rows=rows, counts=counts,
            cell_idx_safe=np.where(cell_valid, cell_idx, 0),
            cell_valid=cell_valid, pad_inf=pad_inf,
        )

    def pack(self, x: np.ndarray) -> np.ndarray:
        """(n, ...) pixel-order array -> (m, pmax, ...) zero-padded."""
        out = np.zeros((self.m, self.pmax) + x.shape[1:], dtype=np.float64)
        out[self.cell_of_sorted, self.rows] = x[self.order]
        return out

    def unpack(self, xp: np.ndarray) -> np.ndarray:
        """(m, pmax, ...) padded array -> (n, ...) pixel order."""
        out = np.empty((self.n,) + xp.shape[2:], dtype=xp.dtype)
        out[self.order] = xp[self.cell_of_sorted, self.rows]
        return out


def _layout(nbr: NeighborTable) -> _CellLayout:
    lay = getattr(nbr, "_cells", None)
    if lay is None:
        lay = _CellLayout.build(nbr)
        object.__setattr__(nbr, "_cells", lay)
    return lay


def _exp_shifted(arg: np.ndarray) -> np.ndarray:
    """exp(arg) with deep-underflow entries flushed to exact zero."""
    out = np.zeros_like(arg)
    np.exp(arg, out=out, where=arg > EXP_FLOOR)
    return out


def _dist_padded(fp: np.ndarray, fsq: np.ndarray, centers: np.ndarray,
                 lay: _CellLayout) -> np.ndarray:
    """Squared distances (m, pmax, 9), +inf on padding and invalid slots."""
    cand = centers[lay.cell_idx_safe]                       # (m, 9, k)
    d2 = np.matmul(fp, cand.transpose(0, 2, 1))             # pixel.candidate
    d2 *= -2.0
    d2 += fsq[:, :, None]
    d2 += np.einsum("ij,ij->i", centers, centers)[lay.cell_idx_safe][:, None, :]
    d2 += lay.pad_inf
    return d2


def _assign_padded(fp, fsq, centers, lay, stabilize):
    d2 = _dist_padded(fp, fsq, centers, lay)
    shift = float(d2.min()) if stabilize else 0.0
    np.subtract(shift, d2, out=d2)
    return _exp_shifted(d2), shift


def _update_padded(fp, qp, lay):
    num_cell = np.matmul(qp.transpose(0, 2, 1), fp)          # (m, 9, k)
    mass_cell = qp.sum(axis=1)                               # (m, 9)
    k = fp.shape[2]
    num = np.zeros((lay.m, k))
    mass = np.zeros(lay.m)
    flat = lay.cell_idx_safe.ravel()
    np.add.at(num, flat, num_cell.reshape(-1, k))
    np.add.at(mass, flat, mass_cell.ravel())
    centers = num / (mass + EPS_MASS)[:, None]
    return centers, mass


# ---------------------------------------------------------------------------
# plain gather/scatter kernels (arbitrary neighbor tables)


def _assign_simple(feats, centers, nbr, stabilize):
    n = feats.shape[0]
    idx_safe = _idx_safe(nbr)
    d2 = np.empty((n, 9))
    for j in range(9):
        diff = feats - centers[idx_safe[:, j]]
        d2[:, j] = np.einsum("ij,ij->i", diff, diff)
    d2[~nbr.valid] = np.inf
    shift = float(d2.min()) if stabilize else 0.0
    q = _exp_shifted(shift - d2)
    mass = np.bincount(idx_safe.ravel(), weights=q.ravel(), minlength=nbr.m)
    return q, mass, shift


def _scatter_weighted(values, q, nbr):
    """(m, l) sums of q-weighted pixel rows over candidate slots."""
    idx_flat = _idx_safe(nbr).ravel()
    l = values.shape[1]
    out = np.empty((nbr.m, l))
    for c in range(l):
        w = (q * values[:, c:c + 1]).ravel()
        out[:, c] = np.bincount(idx_flat, weights=w, minlength=nbr.m)
    return out


# ---------------------------------------------------------------------------
# public operations


def soft_assign(feats: np.ndarray, state: SuperpixelState,
                nbr: NeighborTable, *, stabilize: bool = True) -> Association:
    """Exponential soft assignment of pixels to their candidate superpixels.

    Weights are exp(-(d - d_min)) with d the squared feature distance and
    d_min the global minimum over all valid pairs; subtracting one global
    constant rescales every weight by the same factor, which all downstream
    consumers are invariant to, while preventing underflow of the best
    matches. Pass stabilize=False for the unshifted weights.
    """
    _check_finite(feats, "features")
    _check_finite(state.centers, "centers")
    if feats.shape[1] != state.centers.shape[1]:
        raise ValueError("feature dimension mismatch between pixels and centers")
    lay = _layout(nbr)
    if lay.uniform:
        fp = lay.pack(feats)
        fsq = np.einsum("mpk,mpk->mp", fp, fp)
        qp, _ = _assign_padded(fp, fsq, state.centers, lay, stabilize)
        _, mass = _update_padded(fp, qp, lay)
        q = lay.unpack(qp)
    else:
        q, mass, _ = _assign_simple(feats, state.centers, nbr, stabilize)
    return Association(q=q, nbr=nbr, col_mass=mass)


def update_centers(feats: np.ndarray, assoc: Association) -> SuperpixelState:
    """Weighted-mean center update from soft associations."""
    lay = _layout(assoc.nbr)
    if lay.uniform:
        centers, mass = _update_padded(lay.pack(feats), lay.pack(assoc.q), lay)
    else:
        num = _scatter_weighted(feats, assoc.q, assoc.nbr)
        idx_flat = _idx_safe(assoc.nbr).ravel()
        mass = np.bincount(idx_flat, weights=assoc.q.ravel(), minlength=assoc.nbr.m)
        centers = num / (mass + EPS_MASS)[:, None]
    return SuperpixelState(centers=centers, mass=mass)


def run_dslic(feats: np.ndarray, spec: GridSpec, v: int, *,
              stabilize: bool = True):
    """Run v soft assign/update iterations from the grid-mean centers.

    Returns the final Association and SuperpixelState.
    """
    assoc, state, _ = _run_loop(feats, spec, v, stabilize, record=False)
    return assoc, state


def _run_loop(feats, spec, v, stabilize, record):
    if v < 1:
        raise ValueError(f"iteration count must be >= 1, got {v}")
    _check_finite(feats, "features")
    nbr = neighbor_table(spec)
    lay = _layout(nbr)
    state0 = init_centers(feats, spec)
    fp = lay.pack(feats)
    fsq = np.einsum("mpk,mpk->mp", fp, fp)
    centers = state0.centers
    steps = []
    qp = mass = None
    for _ in range(v):
        qp, shift = _assign_padded(fp, fsq, centers, lay, stabilize)
        new_centers, mass = _update_padded(fp, qp, lay)
        if record:
            steps.append((centers, new_centers, lay.unpack(qp), mass, shift))
        centers = new_centers
    assoc = Association(q=lay.unpack(qp), nbr=nbr, col_mass=mass)
    return assoc, SuperpixelState(centers=centers, mass=mass), steps


def run_slic_hard(feats: np.ndarray, spec: GridSpec, v: int):
    """Classic hard clustering restricted to the same 9-candidate sets.

    Ties in the nearest-candidate step go to the lowest superpixel id;
    clusters that lose all pixels keep their previous center. Returns the
    final LabelMap (not connectivity-enforced) and SuperpixelState.
    """
    if v < 1:
        raise ValueError(f"iteration count must be >= 1, got {v}")
    _check_finite(feats, "features")
    nbr = neighbor_table(spec)
    lay = _layout(nbr)
    centers = init_centers(feats, spec).centers
    fp = lay.pack(feats)
    fsq = np.einsum("mpk,mpk->mp", fp, fp)
    n, k = feats.shape
    labels = None
    counts = None
    for _ in range(v):
        d2 = _dist_padded(fp, fsq, centers, lay)
        # first minimum in slot order == lowest candidate id (ids increase
        # along the slot axis among valid slots)
        slot = lay.unpack(d2.argmin(axis=2))
        labels = nbr.idx[np.arange(n), slot]
        counts = np.bincount(labels, minlength=spec.m)
        sums = np.empty((spec.m, k))
        for c in range(k):
            sums[:, c] = np.bincount(labels, weights=feats[:, c], minlength=spec.m)
        occupied = counts > 0
        centers = np.where(
            occupied[:, None], sums / np.maximum(counts, 1)[:, None], centers
        )
    state = SuperpixelState(centers=centers, mass=counts.astype(np.float64))
    return LabelMap(labels=labels, n_w=spec.n_w, n_h=spec.n_h), state


def hard_labels(assoc: Association) -> LabelMap:
    """Per-pixel argmax over the valid candidate slots (ties: lowest id)."""
    qq = np.where(assoc.nbr.valid, assoc.q, -1.0)
    slots = qq.argmax(axis=1)
    labels = assoc.nbr.idx[np.arange(assoc.n), slots]
    return LabelMap(labels=labels, n_w=assoc.nbr.n_w, n_h=assoc.nbr.n_h)


def pixels_to_superpixels(values: np.ndarray, assoc: Association) -> np.ndarray:
    """Map per-pixel rows (n, l) to per-superpixel rows (m, l).

    Column-normalized weighted mean: each superpixel row is the weighted
    average of the pixel rows assigned to it (mass-guarded).
    """
    values = np.asarray(values, dtype=np.float64)
    _check_finite(values, "pixel values")
    num = _scatter_weighted(values, assoc.q, assoc.nbr)
    return num / (assoc.col_mass + EPS_MASS)[:, None]


def superpixels_to_pixels(values: np.ndarray, assoc: Association) -> np.ndarray:
    """Map per-superpixel rows (m, l) back to pixels (n, l).

    Row-normalized convex combination over each pixel's candidates. Rows
    with zero total weight (possible only after deep underflow) map to zero.
    """
    values = np.asarray(values, dtype=np.float64)
    _check_finite(values, "superpixel values")
    q = assoc.q
    rowsum = q.sum(axis=1)
    qt = q / np.where(rowsum > 0, rowsum, 1.0)[:, None]
    idx_safe = _idx_safe(assoc.nbr)
    out = np.zeros((assoc.n, values.shape[1]))
    for j in range(9):
        out += qt[:, j:j + 1] * values[idx_safe[:, j]]
    return out


# ---------------------------------------------------------------------------
# connectivity


def _components_4(lab2d: np.ndarray):
    """4-connected components of a label image via the pixel graph."""
    h, w = lab2d.shape
    n = h * w
    pix = np.arange(n).reshape(h, w)
    same_r = lab2d[:, :-1] == lab2d[:, 1:]
    same_d = lab2d[:-1, :] == lab2d[1:, :]
    rows = np.concatenate([pix[:, :-1][same_r], pix[:-1, :][same_d]])
    cols = np.concatenate([pix[:, 1:][same_r], pix[1:, :][same_d]])
    graph = sparse.coo_matrix(
        (np.ones(rows.shape[0], dtype=bool), (rows, cols)), shape=(n, n)
    )
    ncomp, comp = sparse.csgraph.connected_components(graph, directed=False)
    return ncomp, comp.reshape(h, w)


def _contact_counts(comp2d: np.ndarray, ncomp: int):
    """Boundary-edge counts between adjacent components."""
    a = np.concatenate([comp2d[:, :-1].ravel(), comp2d[:-1, :].ravel()])
    b = np.concatenate([comp2d[:, 1:].ravel(), comp2d[1:, :].ravel()])
    diff = a != b
    a, b = a[diff], b[diff]
    code = np.concatenate([a * ncomp + b, b * ncomp + a]).astype(np.int64)
    uniq, cnt = np.unique(code, return_counts=True)
    adj: list[dict[int, int]] = [dict() for _ in range(ncomp)]
    for c, k in zip(uniq, cnt):
        adj[int(c) // ncomp][int(c) % ncomp] = int(k)
    return adj


def enforce_connectivity(labels: LabelMap, spec: GridSpec) -> LabelMap:
    """Split labels into 4-connected components and merge undersized ones.

    A component counts as undersized when smaller than a quarter of the
    average superpixel area, measured against both the planned grid count
    and the current surviving count (the latter can only tighten as merging
    proceeds). Undersized components are merged smallest-first into the
    adjacent component sharing the longest boundary; survivors are relabeled
    densely in scan order.
    """
    lab2d = labels.grid()
    n = labels.n
    ncomp, comp2d = _components_4(lab2d)
    adj = _contact_counts(comp2d, ncomp)
    size = np.bincount(comp2d.ravel(), minlength=ncomp).tolist()

    parent = list(range(ncomp))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    alive = set(range(ncomp))
    grid_thresh = n / (4.0 * spec.m)
    while len(alive) > 1:
        thresh = max(grid_thresh, n / (4.0 * len(alive)))
        small = [c for c in alive if size[c] < thresh]
        if not small:
            break
        u = min(small, key=lambda c: (size[c], c))
        # compact u's adjacency onto live roots
        acc: dict[int, int] = {}
        for w, cnt in adj[u].items():
            r = find(w)
            if r != u:
                acc[r] = acc.get(r, 0) + cnt
        adj[u] = acc
        target = max(acc.items(), key=lambda it: (it[1], -it[0]))[0]
        parent[u] = target
        size[target] += size[u]
        alive.remove(u)
        for w, cnt in acc.items():
            if w != target:
                adj[target][w] = adj[target].get(w, 0) + cnt
        adj[target].pop(u, None)

    roots = np.array([find(c) for c in range(ncomp)])
    merged = roots[comp2d.ravel()]
    # dense relabel in scan order of first appearance
    uniq, first = np.unique(merged, return_index=True)
    rank = np.empty(uniq.shape[0], dtype=np.int64)
    rank[np.argsort(first)] = np.arange(uniq.shape[0])
    out = rank[np.searchsorted(uniq, merged)]
    return LabelMap(labels=out, n_w=labels.n_w, n_h=labels.n_h, connected=True)
