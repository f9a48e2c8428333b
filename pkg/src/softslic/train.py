"""Training loop for the linear feature transform.

Optimizes the combined reconstruction + compactness loss over random image
patches with left-right flip augmentation, using Adam over the linear model
parameters. Checkpoint selection follows held-out accuracy: the model kept
is the one with the best mean overlap accuracy on the validation items.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import features as feat
from .autodiff import (
    AdamState,
    LinearModel,
    adam_step,
    backward,
    forward_recorded,
    model_backward,
    model_forward,
)
from .cluster import hard_labels
from .grid import plan_grid
from .losses import PixelProperty, combined_loss
from .metrics import GroundTruth, PipelineParams, asa, segment_image


@dataclass
class TrainLogRow:
    step: int
    recon: float
    compact: float
    total: float


@dataclass
class TrainResult:
    model: LinearModel            # final parameters
    best_model: LinearModel       # best-by-validation parameters
    best_val_asa: float
    best_step: int
    log: list[TrainLogRow]
    val_history: list[tuple[int, float]]


def sample_patch(rng: np.random.Generator, img: np.ndarray, gt: np.ndarray,
                 patch: int):
    """Random patch crop with a coin-flip left-right mirror.

    Patches larger than the image fall back to the whole image.
    """
    h, w = img.shape[:2]
    ph, pw = min(patch, h), min(patch, w)
    y0 = int(rng.integers(0, h - ph + 1))
    x0 = int(rng.integers(0, w - pw + 1))
    img_p = img[y0:y0 + ph, x0:x0 + pw]
    gt_p = gt[y0:y0 + ph, x0:x0 + pw]
    if rng.random() < 0.5:
        img_p = img_p[:, ::-1]
        gt_p = gt_p[:, ::-1]
    return np.ascontiguousarray(img_p), np.ascontiguousarray(gt_p)


def _dense_one_hot(gt_patch: np.ndarray) -> PixelProperty:
    _, inverse = np.unique(gt_patch.ravel(), return_inverse=True)
    return PixelProperty.from_labels(inverse)


def _step_gradients(model, img_patch, gt_patch, *, m_target, v, lam, eta,
                    gamma_color):
    h, w = img_patch.shape[:2]
    spec = plan_grid(w, h, min(m_target, w * h))
    scales = feat.compute_scales(w, h, spec.m_w, spec.m_h, eta=eta,
                                 gamma_color=gamma_color)
    xylab = feat.build_features(img_patch, scales)
    feats = model_forward(xylab, model)
    assoc, _, tape = forward_recorded(feats, spec, v)
    labels = hard_labels(assoc)
    prop = _dense_one_hot(gt_patch)
    loss, dq = combined_loss(prop, xylab[:, :2], assoc, labels, lam)
    dfeats = backward(tape, dq, None)
    d_weights, d_bias, _ = model_backward(xylab, model, dfeats)
    return loss, d_weights, d_bias


def validation_asa(model: LinearModel | None, items, *, m_target, v, eta,
                   gamma_color) -> float:
    """Mean overlap accuracy of the full pipeline over (name, img, gt2d)."""
    params = PipelineParams(v=v, eta=eta, gamma_color=gamma_color,
                            connectivity=True, model=model)
    scores = []
    for _, img, gt2d in items:
        labels = segment_image(img, m_target, params)
        scores.append(asa(labels, GroundTruth.from_segments(gt2d)))
    return float(np.mean(scores))


def train_model(
    train_items,
    val_items,
    *,
    k: int = 20,
    steps: int = 1000,
    batch: int = 8,
    lr: float = 1e-4,
    lam: float = 1e-5,
    v_train: int = 5,
    v_eval: int = 10,
    m_target: int = 100,
    patch: int = 201,
    eta: float = 2.5,
    gamma_color: float = 0.26,
    seed: int = 0,
    val_every: int | None = None,
) -> TrainResult:
    """Train a LinearModel on (name, image, gt2d) triples.

    Deterministic in the seed: one generator drives patch sampling, flips,
    and the (small, symmetry-breaking) weight initialization.
    """
    if not train_items:
        raise ValueError("training corpus is empty")
    if not val_items:
        raise ValueError("validation corpus is empty")
    if val_every is None:
        val_every = max(1, steps // 10)
    rng = np.random.default_rng(seed)
    model = LinearModel.init_random(k, rng)
    adam = AdamState(lr=lr)
    log: list[TrainLogRow] = []

    def validate(m):
        return validation_asa(m, val_items, m_target=m_target, v=v_eval,
                              eta=eta, gamma_color=gamma_color)

    best_val = validate(model)
    best_model = LinearModel(model.weights.copy(), model.bias.copy())
    best_step = 0
    val_history = [(0, best_val)]

    for step in range(1, steps + 1):
        g_w = np.zeros_like(model.weights)
        g_b = np.zeros_like(model.bias)
        recon = compact = total = 0.0
        for _ in range(batch):
            i = int(rng.integers(len(train_items)))
            img_p, gt_p = sample_patch(rng, train_items[i][1],
                                       train_items[i][2], patch)
            loss, dw, db = _step_gradients(
                model, img_p, gt_p, m_target=m_target, v=v_train, lam=lam,
                eta=eta, gamma_color=gamma_color,
            )
            g_w += dw
            g_b += db
            recon += loss.recon
            compact += loss.compact
            total += loss.total
        g_w /= batch
        g_b /= batch
        weights, bias = adam_step(adam, [model.weights, model.bias], [g_w, g_b])
        model = LinearModel(weights=weights, bias=bias)
        log.append(TrainLogRow(step=step, recon=recon / batch,
                               compact=compact / batch, total=total / batch))
        if step % val_every == 0 or step == steps:
            score = validate(model)
            val_history.append((step, score))
            if score > best_val:
                best_val = score
                best_model = LinearModel(model.weights.copy(), model.bias.copy())
                best_step = step

    return TrainResult(model=model, best_model=best_model,
                       best_val_asa=best_val, best_step=best_step,
                       log=log, val_history=val_history)
