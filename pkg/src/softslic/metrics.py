"""Superpixel evaluation suite.

Overlap-based achievable accuracy, boundary precision/recall with a pixel
tolerance, area-weighted isoperimetric compactness, and segmented-flow
end-point error, plus a sweep harness that reruns the clustering pipeline
over a corpus for several superpixel counts and emits CSV rows.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from . import features as feat
from .autodiff import LinearModel, model_forward
from .cluster import LabelMap, enforce_connectivity, hard_labels, run_dslic
from .grid import plan_grid

SEGMENTS = "segments"
FLOW = "flow"


@dataclass
class GroundTruth:
    """Reference annotation: dense segment ids or a 2-channel flow field."""

    kind: str
    n_w: int
    n_h: int
    labels: np.ndarray | None = None
    flow: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.n_w * self.n_h
        if self.kind == SEGMENTS:
            if self.labels is None or self.labels.shape != (n,):
                raise ValueError("segment ground truth needs (n,) labels")
            lab = np.asarray(self.labels)
            w = int(lab.max()) + 1
            if lab.min() < 0 or len(np.unique(lab)) != w:
                raise ValueError("segment ids must be dense in [0, w)")
        elif self.kind == FLOW:
            if self.flow is None or self.flow.shape != (n, 2):
                raise ValueError("flow ground truth needs (n, 2) vectors")
            if not np.isfinite(self.flow).all():
                raise ValueError("flow must be finite")
        else:
            raise ValueError(f"unknown ground truth kind {self.kind!r}")

    @classmethod
    def from_segments(cls, labels2d: np.ndarray) -> "GroundTruth":
        labels2d = np.asarray(labels2d)
        h, w = labels2d.shape
        return cls(kind=SEGMENTS, n_w=w, n_h=h, labels=labels2d.ravel())

    @classmethod
    def from_flow(cls, flow2d: np.ndarray) -> "GroundTruth":
        flow2d = np.asarray(flow2d, dtype=np.float64)
        h, w = flow2d.shape[:2]
        return cls(kind=FLOW, n_w=w, n_h=h, flow=flow2d.reshape(-1, 2))


@dataclass
class EvalReport:
    m_achieved: int
    asa: float | None = None
    br: float | None = None
    bp: float | None = None
    f_measure: float | None = None
    co: float | None = None
    epe: float | None = None


def _require_segments(gt: GroundTruth, lab: LabelMap) -> None:
    if gt.kind != SEGMENTS:
        raise ValueError("this metric needs segment ground truth")
    if gt.n_w * gt.n_h != lab.n:
        raise ValueError(
            f"pixel counts differ: labels {lab.n}, ground truth {gt.n_w * gt.n_h}"
        )


def asa(labels: LabelMap, gt: GroundTruth) -> float:
    """Achievable segmentation accuracy: each superpixel is credited with
    its best-overlapping ground-truth segment; credits sum to at most n."""
    _require_segments(gt, labels)
    hl = labels.labels.astype(np.int64)
    gl = gt.labels.astype(np.int64)
    w = int(gl.max()) + 1
    pair, count = np.unique(hl * w + gl, return_counts=True)
    best = np.zeros(int(hl.max()) + 1)
    np.maximum.at(best, pair // w, count)
    return float(best.sum() / labels.n)


def _boundary_mask(lab2d: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbor of a different label. The image border
    itself does not count as a boundary."""
    b = np.zeros(lab2d.shape, dtype=bool)
    d = lab2d[:, :-1] != lab2d[:, 1:]
    b[:, :-1] |= d
    b[:, 1:] |= d
    d = lab2d[:-1, :] != lab2d[1:, :]
    b[:-1, :] |= d
    b[1:, :] |= d
    return b


def default_tolerance(n_w: int, n_h: int) -> int:
    """Benchmark-standard boundary tolerance: 0.25% of the image diagonal,
    at least one pixel."""
    return max(1, int(np.floor(0.0025 * np.hypot(n_w, n_h) + 0.5)))


def boundary_pr(labels: LabelMap, gt: GroundTruth,
                r: int | None = None) -> tuple[float, float]:
    """Boundary precision and recall within Chebyshev distance r.

    Precision: fraction of superpixel boundary pixels near a ground-truth
    boundary pixel; recall: the converse. An empty boundary set scores 0.
    """
    _require_segments(gt, labels)
    if r is None:
        r = default_tolerance(labels.n_w, labels.n_h)
    hb = _boundary_mask(labels.grid())
    gb = _boundary_mask(gt.labels.reshape(labels.n_h, labels.n_w))
    size = 2 * r + 1
    hb_near = maximum_filter(hb.astype(np.uint8), size=size, mode="constant") > 0
    gb_near = maximum_filter(gb.astype(np.uint8), size=size, mode="constant") > 0
    n_h_pix = int(hb.sum())
    n_g_pix = int(gb.sum())
    bp = float((hb & gb_near).sum() / n_h_pix) if n_h_pix else 0.0
    br = float((gb & hb_near).sum() / n_g_pix) if n_g_pix else 0.0
    return bp, br


def f_measure(bp: float, br: float) -> float:
    return 2.0 * bp * br / (bp + br) if bp + br > 0 else 0.0


def compactness_score(labels: LabelMap) -> float:
    """Area-weighted isoperimetric score in [0, 1].

    Perimeter counts unit edge segments, including those on the image
    border; each segment's 4*pi*A/P^2 term is clamped at 1.
    """
    lab = labels.grid()
    n = labels.n
    m = int(lab.max()) + 1
    area = np.bincount(lab.ravel(), minlength=m).astype(np.float64)
    perim = np.zeros(m)
    d = lab[:, :-1] != lab[:, 1:]
    np.add.at(perim, lab[:, :-1][d], 1)
    np.add.at(perim, lab[:, 1:][d], 1)
    d = lab[:-1, :] != lab[1:, :]
    np.add.at(perim, lab[:-1, :][d], 1)
    np.add.at(perim, lab[1:, :][d], 1)
    for border in (lab[0, :], lab[-1, :], lab[:, 0], lab[:, -1]):
        np.add.at(perim, border, 1)
    term = np.minimum(4.0 * np.pi * area / perim**2, 1.0)
    return float((area / n * term).sum())


def segmented_flow_epe(labels: LabelMap, flow: np.ndarray) -> float:
    """Mean end-point error after replacing flow by its per-segment mean."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != (labels.n, 2):
        raise ValueError(f"flow must be ({labels.n}, 2), got {flow.shape}")
    m = int(labels.labels.max()) + 1
    count = np.bincount(labels.labels, minlength=m).astype(np.float64)
    count = np.maximum(count, 1.0)
    mean = np.stack(
        [np.bincount(labels.labels, weights=flow[:, c], minlength=m) / count
         for c in (0, 1)],
        axis=1,
    )
    diff = flow - mean[labels.labels]
    return float(np.hypot(diff[:, 0], diff[:, 1]).mean())


# ---------------------------------------------------------------------------
# corpus sweep


@dataclass
class PipelineParams:
    """Clustering configuration shared across a sweep."""

    v: int = 10
    eta: float = 2.5
    gamma_color: float = 0.26
    connectivity: bool = True
    boundary_tol: int | None = None
    model: LinearModel | None = None


def segment_image(img: np.ndarray, m_target: int,
                  params: PipelineParams) -> LabelMap:
    """Full clustering pipeline from an sRGB image to hard labels."""
    h, w = np.asarray(img).shape[:2]
    spec = plan_grid(w, h, m_target)
    scales = feat.compute_scales(w, h, spec.m_w, spec.m_h,
                                 eta=params.eta, gamma_color=params.gamma_color)
    feats = feat.build_features(img, scales)
    if params.model is not None:
        feats = model_forward(feats, params.model)
    assoc, _ = run_dslic(feats, spec, params.v)
    labels = hard_labels(assoc)
    if params.connectivity:
        labels = enforce_connectivity(labels, spec)
    return labels


def evaluate_labels(labels: LabelMap, gt: GroundTruth,
                    r: int | None = None) -> EvalReport:
    report = EvalReport(m_achieved=int(len(np.unique(labels.labels))))
    report.co = compactness_score(labels)
    if gt.kind == SEGMENTS:
        report.asa = asa(labels, gt)
        report.bp, report.br = boundary_pr(labels, gt, r)
        report.f_measure = f_measure(report.bp, report.br)
    else:
        report.epe = segmented_flow_epe(labels, gt.flow)
    return report


CSV_COLUMNS = ("image", "m_requested", "m_achieved", "asa", "br", "bp", "f",
               "co", "epe")


def sweep(items, m_list, params: PipelineParams | None = None) -> list[dict]:
    """Evaluate a corpus at several superpixel counts.

    items: iterable of (name, image, GroundTruth). Returns one row dict per
    (image, m) in deterministic order plus a mean row per m; a failing image
    yields a row with empty metric fields and the sweep continues.
    """
    params = params or PipelineParams()
    items = sorted(items, key=lambda it: it[0])
    rows: list[dict] = []
    for m_target in m_list:
        block: list[EvalReport] = []
        for name, img, gt in items:
            row = {c: "" for c in CSV_COLUMNS}
            row["image"] = name
            row["m_requested"] = m_target
            try:
                labels = segment_image(img, m_target, params)
                report = evaluate_labels(labels, gt, params.boundary_tol)
            except Exception:
                rows.append(row)
                continue
            block.append(report)
            row.update(_report_cells(report))
            rows.append(row)
        if block:
            mean_row = {c: "" for c in CSV_COLUMNS}
            mean_row["image"] = "mean"
            mean_row["m_requested"] = m_target
            for key, attr in (("m_achieved", "m_achieved"), ("asa", "asa"),
                              ("br", "br"), ("bp", "bp"), ("f", "f_measure"),
                              ("co", "co"), ("epe", "epe")):
                vals = [getattr(b, attr) for b in block if getattr(b, attr) is not None]
                if vals:
                    mean_row[key] = float(np.mean(vals))
            rows.append(mean_row)
    return rows


def _report_cells(report: EvalReport) -> dict:
    cells = {"m_achieved": report.m_achieved}
    for key, value in (("asa", report.asa), ("br", report.br),
                       ("bp", report.bp), ("f", report.f_measure),
                       ("co", report.co), ("epe", report.epe)):
        if value is not None:
            cells[key] = value
    return cells


def write_report_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
