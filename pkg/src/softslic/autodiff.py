"""Exact reverse-mode gradients through the unrolled clustering loop.

The forward clustering is v alternations of exponential soft assignment and
mass-normalized center updates, seeded by grid-cell means. Recording the
per-iteration intermediates allows an exact vector-Jacobian product back to
the pixel features: each update step contributes through the weighted sums
and their mass denominators, each assignment step through the exponential
distances to the previous centers, and the seed step through the grid
averaging.

The global shift subtracted before exponentiation is treated as a constant:
it rescales all weights uniformly, and every loss in scope is invariant to
that rescaling, so its true derivative contribution is zero.

Also here: the trainable linear feature transform, an Adam optimizer, a
finite-difference gradient checker, and the model checkpoint format.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cluster import (
    EPS_MASS,
    Association,
    _layout,
    _run_loop,
)
from .grid import GridSpec, NeighborTable, SuperpixelState


@dataclass
class TapeStep:
    """Intermediates of one assign/update iteration."""

    centers_in: np.ndarray   # centers the assignment measured against
    centers_out: np.ndarray  # centers after the weighted update
    q: np.ndarray            # (n, 9) weights, pixel order
    col_mass: np.ndarray     # (m,) per-superpixel total weight
    shift: float             # subtracted minimum squared distance


@dataclass
class Tape:
    """Recorded forward pass, sufficient for exact replay and backward."""

    feats: np.ndarray
    spec: GridSpec
    nbr: NeighborTable
    stabilize: bool
    steps: list[TapeStep] = field(default_factory=list)

    @property
    def v(self) -> int:
        return len(self.steps)


def forward_recorded(feats: np.ndarray, spec: GridSpec, v: int, *,
                     stabilize: bool = True):
    """Run the clustering loop and record a Tape alongside the outputs."""
    assoc, state, raw = _run_loop(feats, spec, v, stabilize, record=True)
    tape = Tape(feats=feats, spec=spec, nbr=assoc.nbr, stabilize=stabilize,
                steps=[TapeStep(*r) for r in raw])
    return assoc, state, tape


def replay_tape(tape: Tape) -> bool:
    """Recompute the forward pass from the tape inputs; True if it
    reproduces every stored array bit-exactly."""
    _, _, raw = _run_loop(tape.feats, tape.spec, tape.v, tape.stabilize,
                          record=True)
    for step, (c_in, c_out, q, mass, shift) in zip(tape.steps, raw):
        same = (
            np.array_equal(step.centers_in, c_in)
            and np.array_equal(step.centers_out, c_out)
            and np.array_equal(step.q, q)
            and np.array_equal(step.col_mass, mass)
            and step.shift == shift
        )
        if not same:
            return False
    return True


def backward(tape: Tape, dL_dQ: np.ndarray | None,
             dL_dS: np.ndarray | None) -> np.ndarray:
    """Exact gradient of the recorded map feats -> (Q^v, S^v).

    dL_dQ: (n, 9) cotangent on the final association (entries on invalid
    slots are ignored); dL_dS: (m, k) cotangent on the final centers. Either
    may be None. Returns dL/dfeats of shape (n, k).
    """
    feats = tape.feats
    n, k = feats.shape
    m = tape.nbr.m
    lay = _layout(tape.nbr)
    if dL_dQ is not None and dL_dQ.shape != (n, 9):
        raise ValueError(f"dL_dQ must have shape {(n, 9)}, got {dL_dQ.shape}")
    if dL_dS is not None and dL_dS.shape != (m, k):
        raise ValueError(f"dL_dS must have shape {(m, k)}, got {dL_dS.shape}")

    fp = lay.pack(feats)
    dfp = np.zeros_like(fp)
    d_centers = np.zeros((m, k)) if dL_dS is None else dL_dS.astype(np.float64)
    dq_direct = None
    if dL_dQ is not None:
        dq_direct = lay.pack(np.where(tape.nbr.valid, dL_dQ, 0.0))

    for t in range(tape.v - 1, -1, -1):
        step = tape.steps[t]
        qp = lay.pack(step.q)
        denom = step.col_mass + EPS_MASS

        # update step: centers_out = (sum q f) / denom
        dnum = d_centers / denom[:, None]                                # (m, k)
        dmass = -np.einsum("ij,ij->i", d_centers, step.centers_out) / denom
        dnum_c = dnum[lay.cell_idx_safe]                                 # (m, 9, k)
        dq = np.matmul(fp, dnum_c.transpose(0, 2, 1))                    # (m, pmax, 9)
        dq += dmass[lay.cell_idx_safe][:, None, :]
        if t == tape.v - 1 and dq_direct is not None:
            dq += dq_direct
        dfp += np.matmul(qp, dnum_c)

        # assignment step: q = exp(shift - d2), d2 = |f - centers_in|^2,
        # shift held constant
        g2 = qp * dq
        g2 *= -1.0
        dfp += 2.0 * g2.sum(axis=2)[:, :, None] * fp
        cand = step.centers_in[lay.cell_idx_safe]                        # (m, 9, k)
        dfp -= 2.0 * np.matmul(g2, cand)
        num_s = np.zeros((m, k))
        mass_s = np.zeros(m)
        flat = lay.cell_idx_safe.ravel()
        np.add.at(num_s, flat, np.matmul(g2.transpose(0, 2, 1), fp).reshape(-1, k))
        np.add.at(mass_s, flat, g2.sum(axis=1).ravel())
        d_centers = -2.0 * num_s + 2.0 * step.centers_in * mass_s[:, None]

    # seed step: centers_0 are per-cell means
    dfeats = lay.unpack(dfp)
    owner = tape.spec.owner
    dfeats += d_centers[owner] / lay.counts[owner][:, None]
    return dfeats


# ---------------------------------------------------------------------------
# linear feature transform


@dataclass
class LinearModel:
    """Linear map from the 5 scaled XYLab channels to k-5 learned channels.

    The output feature matrix is the input concatenated with its linear
    transform, so k >= 6 whenever the model is in use.
    """

    weights: np.ndarray  # (5, k - 5)
    bias: np.ndarray     # (k - 5,)

    @property
    def k(self) -> int:
        return 5 + self.weights.shape[1]

    @classmethod
    def zeros(cls, k: int) -> "LinearModel":
        if k < 6:
            raise ValueError(f"model output dimension must be >= 6, got {k}")
        return cls(weights=np.zeros((5, k - 5)), bias=np.zeros(k - 5))

    @classmethod
    def init_random(cls, k: int, rng: np.random.Generator,
                    scale: float = 0.01) -> "LinearModel":
        if k < 6:
            raise ValueError(f"model output dimension must be >= 6, got {k}")
        return cls(weights=rng.normal(0.0, scale, (5, k - 5)),
                   bias=np.zeros(k - 5))


def model_forward(xylab: np.ndarray, model: LinearModel) -> np.ndarray:
    """(n, 5) scaled XYLab -> (n, k) features with learned extra channels."""
    xylab = np.asarray(xylab, dtype=np.float64)
    if xylab.ndim != 2 or xylab.shape[1] != 5:
        raise ValueError(f"expected (n, 5) input, got {xylab.shape}")
    return np.hstack([xylab, xylab @ model.weights + model.bias])


def model_backward(xylab: np.ndarray, model: LinearModel,
                   dL_dF: np.ndarray):
    """Gradients of model_forward: (dL_dweights, dL_dbias, dL_dxylab)."""
    if dL_dF.shape != (xylab.shape[0], model.k):
        raise ValueError(
            f"dL_dF must have shape {(xylab.shape[0], model.k)}, got {dL_dF.shape}"
        )
    d_learned = dL_dF[:, 5:]
    d_weights = xylab.T @ d_learned
    d_bias = d_learned.sum(axis=0)
    d_xylab = dL_dF[:, :5] + d_learned @ model.weights.T
    return d_weights, d_bias, d_xylab


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Adam accumulator state; one instance per trained parameter set."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns the new parameter arrays."""
    if len(params) != len(grads):
        raise ValueError("params and grads must pair up")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_probes: int
    tol: float
    passed: bool
    worst_index: tuple[int, int] | None = None
    worst_analytic: float = 0.0
    worst_numeric: float = 0.0


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    """Relative difference with an absolute floor below which finite
    differences cannot certify anything."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(
    feats: np.ndarray,
    spec: GridSpec,
    v: int,
    loss_spec: Callable[[Association, SuperpixelState], tuple],
    h: float = 1e-5,
    tol: float = 1e-4,
    *,
    probes: int | None = None,
    stabilize: bool = True,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backward() against central finite differences.

    loss_spec maps (Association, SuperpixelState) to (value, dL_dQ, dL_dS);
    the cotangents may be None. Probes every feature entry unless `probes`
    caps the number of randomly chosen coordinates. tol must be positive for
    the check to be able to pass.
    """
    assoc, state, tape = forward_recorded(feats, spec, v, stabilize=stabilize)
    _, dq, ds = loss_spec(assoc, state)
    analytic = backward(tape, dq, ds)

    n, k = feats.shape
    coords = [(p, c) for p in range(n) for c in range(k)]
    if probes is not None and probes < len(coords):
        rng = rng or np.random.default_rng(0)
        picked = rng.choice(len(coords), size=probes, replace=False)
        coords = [coords[i] for i in picked]

    def value_at(f):
        from .cluster import run_dslic

        a, s = run_dslic(f, spec, v, stabilize=stabilize)
        return loss_spec(a, s)[0]

    worst = (0.0, None, 0.0, 0.0)
    for p, c in coords:
        fplus = feats.copy()
        fplus[p, c] += h
        fminus = feats.copy()
        fminus[p, c] -= h
        numeric = (value_at(fplus) - value_at(fminus)) / (2.0 * h)
        e = rel_err(analytic[p, c], numeric)
        if e > worst[0]:
            worst = (e, (p, c), float(analytic[p, c]), float(numeric))
    passed = worst[0] <= tol if tol > 0 else False
    return GradCheckReport(
        max_rel_err=worst[0], n_probes=len(coords), tol=tol, passed=passed,
        worst_index=worst[1], worst_analytic=worst[2], worst_numeric=worst[3],
    )


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(RuntimeError):
    """Raised for unreadable, truncated, or mismatched model files."""


_MAGIC = b"SSNL"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, k, reserved


def save_model(path: str | Path, model: LinearModel,
               hyper: dict | None = None) -> None:
    """Write the checkpoint (16-byte header + float64 parameters, little
    endian) and a JSON sidecar with hyperparameters next to it."""
    path = Path(path)
    payload = np.concatenate([model.weights.ravel(), model.bias]).astype("<f8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, model.k, 0))
        f.write(payload.tobytes())
    sidecar = dict(hyper or {})
    sidecar["k"] = model.k
    with open(path.with_name(path.name + ".json"), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path: str | Path) -> tuple[LinearModel, dict]:
    """Read a checkpoint; returns the model and its sidecar hyperparameters
    (empty dict when the sidecar is missing)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"checkpoint {path} is truncated")
    magic, version, k, _ = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise CheckpointError(f"checkpoint {path} has bad magic {magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if k < 6:
        raise CheckpointError(f"checkpoint {path} carries invalid k={k}")
    n_params = 5 * (k - 5) + (k - 5)
    expect = _HEADER.size + 8 * n_params
    if len(blob) != expect:
        raise CheckpointError(
            f"checkpoint {path} has {len(blob)} bytes, expected {expect}"
        )
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    weights = flat[: 5 * (k - 5)].reshape(5, k - 5)
    bias = flat[5 * (k - 5):]
    model = LinearModel(weights=weights.copy(), bias=bias.copy())
    sidecar_path = path.with_name(path.name + ".json")
    hyper: dict = {}
    if sidecar_path.exists():
        try:
            hyper = json.loads(sidecar_path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise CheckpointError(f"bad sidecar {sidecar_path}: {e}") from e
    return model, hyper
