"""Task losses over the soft association matrix, with exact cotangents.

The reconstruction loss measures how well a per-pixel property survives the
round trip pixels -> superpixels -> pixels through the association matrix
(cross-entropy for one-hot labels, mean L1 for flow). The compactness loss
penalizes positional spread inside each hard cluster. Both return the exact
gradient with respect to the raw association weights; the hard labels are
held constant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import (
    EPS_MASS,
    Association,
    LabelMap,
    _idx_safe,
    pixels_to_superpixels,
)

ONE_HOT = "one-hot-labels"
FLOW = "flow-vectors"

# Clamp for log() when a pixel's own label never appears among its 9
# candidate superpixels.
CE_CLAMP = 1e-12


@dataclass
class PixelProperty:
    """Per-pixel rows (n, l) to be represented by superpixels."""

    values: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"values must be (n, l), got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("property values must be finite")
        if self.kind == ONE_HOT:
            ok = ((v == 0) | (v == 1)).all() and (v.sum(axis=1) == 1).all()
            if not ok:
                raise ValueError("label rows must be exactly one-hot")
        elif self.kind == FLOW:
            if v.shape[1] != 2:
                raise ValueError(f"flow rows must be 2-dimensional, got {v.shape[1]}")
        else:
            raise ValueError(f"unknown property kind {self.kind!r}")
        self.values = v

    @classmethod
    def from_labels(cls, labels: np.ndarray, n_classes: int | None = None):
        labels = np.asarray(labels)
        if n_classes is None:
            n_classes = int(labels.max()) + 1
        v = np.zeros((labels.shape[0], n_classes))
        v[np.arange(labels.shape[0]), labels] = 1.0
        return cls(values=v, kind=ONE_HOT)

    @classmethod
    def from_flow(cls, flow: np.ndarray):
        return cls(values=np.asarray(flow, dtype=np.float64), kind=FLOW)


@dataclass
class LossValue:
    recon: float
    compact: float
    lam: float

    @property
    def total(self) -> float:
        return self.recon + self.lam * self.compact


# ---------------------------------------------------------------------------
# mapping VJPs (gradients w.r.t. the raw weights q)


def _p2s_backward_q(values, assoc: Association, mapped, d_mapped):
    """q-gradient of mapped = (sum q values) / (col_mass + eps)."""
    idx_safe = _idx_safe(assoc.nbr)
    g = d_mapped / (assoc.col_mass + EPS_MASS)[:, None]   # (m, l)
    anchor = np.einsum("ij,ij->i", mapped, g)             # (m,)
    dq = np.empty_like(assoc.q)
    for j in range(9):
        ij = idx_safe[:, j]
        dq[:, j] = np.einsum("ij,ij->i", values, g[ij]) - anchor[ij]
    dq[~assoc.nbr.valid] = 0.0
    return dq


def _s2p_forward(values_sp, assoc: Association):
    q = assoc.q
    rowsum = q.sum(axis=1)
    safe = np.where(rowsum > 0, rowsum, 1.0)
    qt = q / safe[:, None]
    idx_safe = _idx_safe(assoc.nbr)
    out = np.zeros((assoc.n, values_sp.shape[1]))
    for j in range(9):
        out += qt[:, j:j + 1] * values_sp[idx_safe[:, j]]
    return out, qt, idx_safe


def _s2p_backward(values_sp, assoc: Association, qt, idx_safe, d_out):
    """Gradients of out = row-normalized(q) @ values_sp."""
    m, l = values_sp.shape
    d_values_sp = np.zeros((m, l))
    dqt = np.empty_like(assoc.q)
    flat = idx_safe.ravel()
    for c in range(l):
        w = (qt * d_out[:, c:c + 1]).ravel()
        d_values_sp[:, c] = np.bincount(flat, weights=w, minlength=m)
    for j in range(9):
        dqt[:, j] = np.einsum("ij,ij->i", d_out, values_sp[idx_safe[:, j]])
    rowsum = assoc.q.sum(axis=1)
    safe = np.where(rowsum > 0, rowsum, 1.0)
    anchor = np.einsum("ij,ij->i", dqt, qt)
    dq = (dqt - anchor[:, None]) / safe[:, None]
    dq[rowsum == 0] = 0.0
    dq[~assoc.nbr.valid] = 0.0
    return d_values_sp, dq


# ---------------------------------------------------------------------------
# losses


def recon_loss(prop: PixelProperty, assoc: Association):
    """Round-trip reconstruction loss and its exact q-gradient.

    One-hot labels score the mean cross-entropy of the reconstructed
    probability at each pixel's own label (clamped at CE_CLAMP); flow scores
    the mean per-pixel L1 distance.
    """
    values = prop.values
    n = assoc.n
    if values.shape[0] != n:
        raise ValueError(f"property rows ({values.shape[0]}) != pixels ({n})")
    mapped = pixels_to_superpixels(values, assoc)
    recon, qt, idx_safe = _s2p_forward(mapped, assoc)

    if prop.kind == ONE_HOT:
        labels = values.argmax(axis=1)
        at_label = recon[np.arange(n), labels]
        clamped = np.maximum(at_label, CE_CLAMP)
        value = float(-np.log(clamped).mean())
        d_recon = np.zeros_like(recon)
        live = at_label > CE_CLAMP
        d_recon[np.arange(n)[live], labels[live]] = -1.0 / (n * clamped[live])
    else:
        diff = recon - values
        value = float(np.abs(diff).sum() / n)
        d_recon = np.sign(diff) / n

    d_mapped, dq = _s2p_backward(mapped, assoc, qt, idx_safe, d_recon)
    dq += _p2s_backward_q(values, assoc, mapped, d_mapped)
    return value, dq


def compact_loss(pos: np.ndarray, assoc: Association, labels: LabelMap):
    """Mean squared positional distance to the hard cluster's soft centroid.

    pos is the (n, 2) positional feature matrix. The hard labels select
    which centroid each pixel is compared against and are treated as
    constant; gradients flow only through the soft centroids.
    """
    pos = np.asarray(pos, dtype=np.float64)
    n = assoc.n
    if pos.shape != (n, 2):
        raise ValueError(f"positional features must be (n, 2), got {pos.shape}")
    centroids = pixels_to_superpixels(pos, assoc)
    diff = pos - centroids[labels.labels]
    value = float((diff * diff).sum() / n)
    d_centroids = np.zeros_like(centroids)
    np.add.at(d_centroids, labels.labels, (-2.0 / n) * diff)
    dq = _p2s_backward_q(pos, assoc, centroids, d_centroids)
    return value, dq


def combined_loss(prop: PixelProperty, pos: np.ndarray, assoc: Association,
                  labels: LabelMap, lam: float = 1e-5):
    """recon + lam * compact, with the summed q-cotangent."""
    r_value, r_dq = recon_loss(prop, assoc)
    c_value, c_dq = compact_loss(pos, assoc, labels)
    return LossValue(recon=r_value, compact=c_value, lam=lam), r_dq + lam * c_dq
