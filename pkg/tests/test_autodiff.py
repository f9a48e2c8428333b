"""Reverse-mode gradients, linear model, Adam, checkpoints."""
import numpy as np
import pytest

from softslic import (
    AdamState,
    CheckpointError,
    LinearModel,
    adam_step,
    backward,
    combined_loss,
    forward_recorded,
    grad_check,
    hard_labels,
    load_model,
    model_backward,
    model_forward,
    plan_grid,
    replay_tape,
    run_dslic,
    save_model,
)
from softslic.losses import PixelProperty


def random_fixture(rng, w=8, h=8, k=5, m_target=4, scale=1.0):
    feats = scale * rng.random((w * h, k))
    spec = plan_grid(w, h, m_target)
    return feats, spec


def linear_loss(wq, ws):
    """Loss = <wq, Q> + <ws, S>; not scale invariant, so use it only with
    the shift disabled."""

    def loss(assoc, state):
        value = float((wq * assoc.q).sum() + (ws * state.centers).sum())
        return value, wq, ws

    return loss


def scale_invariant_loss(labels_vec, pos):
    """Combined reconstruction + compactness loss on fixed data."""

    def loss(assoc, state):
        prop = PixelProperty.from_labels(labels_vec)
        hard = hard_labels(assoc)
        lv, dq = combined_loss(prop, pos, assoc, hard, lam=1e-3)
        return lv.total, dq, None

    return loss


def fd_gradient(value_fn, feats, h=1e-5):
    grad = np.zeros_like(feats)
    for p in range(feats.shape[0]):
        for c in range(feats.shape[1]):
            fp = feats.copy()
            fp[p, c] += h
            fm = feats.copy()
            fm[p, c] -= h
            grad[p, c] = (value_fn(fp) - value_fn(fm)) / (2 * h)
    return grad


def max_rel_err(a, b, floor=1e-6):
    return float((np.abs(a - b) / np.maximum.reduce(
        [np.abs(a), np.abs(b), np.full_like(a, floor)])).max())


class TestForwardRecorded:
    def test_matches_run_dslic_bit_exactly(self, rng):
        feats, spec = random_fixture(rng)
        assoc, state = run_dslic(feats, spec, 4)
        assoc2, state2, tape = forward_recorded(feats, spec, 4)
        assert np.array_equal(assoc.q, assoc2.q)
        assert np.array_equal(state.centers, state2.centers)
        assert np.array_equal(assoc.col_mass, assoc2.col_mass)

    def test_tape_length_and_replay(self, rng):
        feats, spec = random_fixture(rng, w=16, h=16, m_target=4)
        _, _, tape = forward_recorded(feats, spec, 5)
        assert tape.v == 5
        assert replay_tape(tape)

    def test_tape_chains_centers(self, rng):
        feats, spec = random_fixture(rng)
        _, state, tape = forward_recorded(feats, spec, 3)
        for a, b in zip(tape.steps[:-1], tape.steps[1:]):
            assert a.centers_out is b.centers_in
        assert np.array_equal(tape.steps[-1].centers_out, state.centers)


class TestBackward:
    def test_zero_cotangents_zero_gradient(self, rng):
        feats, spec = random_fixture(rng)
        _, _, tape = forward_recorded(feats, spec, 3)
        grad = backward(tape, np.zeros((64, 9)), np.zeros((spec.m, 5)))
        assert np.array_equal(grad, np.zeros_like(feats))

    def test_single_pixel_identity_mean(self):
        feats = np.array([[3.0]])
        spec = plan_grid(1, 1, 1)
        _, _, tape = forward_recorded(feats, spec, 1)
        grad = backward(tape, None, np.array([[1.0]]))
        # S equals the (mass-guarded) mean of the one pixel
        assert grad[0, 0] == pytest.approx(1.0, abs=1e-7)

    def test_matches_fd_linear_loss_no_shift(self, rng):
        feats, spec = random_fixture(rng, k=5)
        wq = rng.normal(size=(64, 9))
        ws = rng.normal(size=(spec.m, 5))
        loss = linear_loss(wq, ws)
        _, _, tape = forward_recorded(feats, spec, 3, stabilize=False)

        def value(f):
            a, s = run_dslic(f, spec, 3, stabilize=False)
            return loss(a, s)[0]

        analytic = backward(tape, wq, ws)
        numeric = fd_gradient(value, feats)
        assert max_rel_err(analytic, numeric) <= 1e-4

    def test_matches_fd_combined_loss_with_shift(self, rng):
        feats, spec = random_fixture(rng, k=5)
        labels_vec = rng.integers(0, 3, 64)
        pos = feats[:, :2].copy()
        loss = scale_invariant_loss(labels_vec, pos)
        assoc, state, tape = forward_recorded(feats, spec, 3)
        _, dq, _ = loss(assoc, state)

        def value(f):
            a, s = run_dslic(f, spec, 3)
            return loss(a, s)[0]

        analytic = backward(tape, dq, None)
        numeric = fd_gradient(value, feats)
        assert max_rel_err(analytic, numeric) <= 1e-4

    def test_gradient_linearity(self, rng):
        feats, spec = random_fixture(rng)
        _, _, tape = forward_recorded(feats, spec, 3)
        c1 = rng.normal(size=(64, 9))
        c2 = rng.normal(size=(64, 9))
        s1 = rng.normal(size=(spec.m, 5))
        s2 = rng.normal(size=(spec.m, 5))
        a, b = 0.7, -1.3
        combined = backward(tape, a * c1 + b * c2, a * s1 + b * s2)
        split = a * backward(tape, c1, s1) + b * backward(tape, c2, s2)
        assert np.abs(combined - split).max() <= 1e-12 * np.abs(split).max()

    def test_deterministic_bitwise(self, rng):
        feats, spec = random_fixture(rng)
        _, _, tape = forward_recorded(feats, spec, 4)
        dq = rng.normal(size=(64, 9))
        ds = rng.normal(size=(spec.m, 5))
        assert np.array_equal(backward(tape, dq, ds), backward(tape, dq, ds))

    def test_shift_constant_assumption_harmless(self, rng):
        # same scale-invariant loss, shift on vs off: gradients agree
        feats, spec = random_fixture(rng, w=48, h=48, m_target=4, scale=0.8)
        labels_vec = rng.integers(0, 3, 2304)
        pos = feats[:, :2].copy()
        loss = scale_invariant_loss(labels_vec, pos)
        grads = []
        for stab in (True, False):
            assoc, state, tape = forward_recorded(feats, spec, 3,
                                                  stabilize=stab)
            _, dq, _ = loss(assoc, state)
            grads.append(backward(tape, dq, None))
        scale = np.abs(grads[1]).max()
        assert np.abs(grads[0] - grads[1]).max() <= 1e-10 * scale

    def test_rejects_bad_shapes(self, rng):
        feats, spec = random_fixture(rng)
        _, _, tape = forward_recorded(feats, spec, 2)
        with pytest.raises(ValueError):
            backward(tape, np.zeros((64, 8)), None)
        with pytest.raises(ValueError):
            backward(tape, None, np.zeros((spec.m, 4)))


class TestLinearModel:
    def test_zero_model_passthrough(self, rng):
        xylab = rng.normal(size=(10, 5))
        model = LinearModel.zeros(8)
        out = model_forward(xylab, model)
        assert out.shape == (10, 8)
        assert np.array_equal(out[:, :5], xylab)
        assert np.array_equal(out[:, 5:], np.zeros((10, 3)))

    def test_selector_weights(self, rng):
        xylab = rng.normal(size=(6, 5))
        w = np.zeros((5, 1))
        w[2, 0] = 1.0  # select the L channel
        model = LinearModel(weights=w, bias=np.zeros(1))
        out = model_forward(xylab, model)
        assert np.array_equal(out[:, 5], xylab[:, 2])

    def test_matches_explicit_matmul(self, rng):
        xylab = rng.normal(size=(3, 5))
        model = LinearModel(weights=rng.normal(size=(5, 4)),
                            bias=rng.normal(size=4))
        out = model_forward(xylab, model)
        for p in range(3):
            for c in range(4):
                expect = model.bias[c] + sum(
                    xylab[p, i] * model.weights[i, c] for i in range(5))
                assert out[p, 5 + c] == pytest.approx(expect, rel=1e-12)

    def test_backward_zero(self, rng):
        xylab = rng.normal(size=(4, 5))
        model = LinearModel(weights=rng.normal(size=(5, 2)), bias=np.zeros(2))
        dw, db, dx = model_backward(xylab, model, np.zeros((4, 7)))
        assert not dw.any() and not db.any() and not dx.any()

    def test_backward_outer_product_single_pixel(self, rng):
        xylab = rng.normal(size=(1, 5))
        model = LinearModel(weights=rng.normal(size=(5, 3)), bias=np.zeros(3))
        dF = rng.normal(size=(1, 8))
        dw, db, dx = model_backward(xylab, model, dF)
        assert dw == pytest.approx(np.outer(xylab[0], dF[0, 5:]), rel=1e-12)
        assert db == pytest.approx(dF[0, 5:], rel=1e-12)
        assert dx[0] == pytest.approx(
            dF[0, :5] + model.weights @ dF[0, 5:], rel=1e-12)

    def test_backward_matches_fd(self, rng):
        xylab = rng.normal(size=(5, 5))
        model = LinearModel(weights=rng.normal(size=(5, 3)),
                            bias=rng.normal(size=3))
        probe = rng.normal(size=(5, 8))

        def value(weights, bias, x):
            return float((probe * model_forward(
                x, LinearModel(weights=weights, bias=bias))).sum())

        dw, db, dx = model_backward(xylab, model, probe)
        h = 1e-6
        for i in range(5):
            for j in range(3):
                wp = model.weights.copy()
                wp[i, j] += h
                wm = model.weights.copy()
                wm[i, j] -= h
                fd = (value(wp, model.bias, xylab)
                      - value(wm, model.bias, xylab)) / (2 * h)
                assert fd == pytest.approx(dw[i, j], rel=1e-6, abs=1e-9)
        for j in range(3):
            bp = model.bias.copy()
            bp[j] += h
            bm = model.bias.copy()
            bm[j] -= h
            fd = (value(model.weights, bp, xylab)
                  - value(model.weights, bm, xylab)) / (2 * h)
            assert fd == pytest.approx(db[j], rel=1e-6, abs=1e-9)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        state = AdamState(lr=0.01)
        p = np.array([1.0, -2.0, 3.0])
        (out,) = adam_step(state, [p], [np.zeros(3)])
        assert np.array_equal(out, p)

    def test_first_step_hand_value(self):
        state = AdamState(lr=0.25)
        p = np.zeros(2)
        g = np.array([4.0, -0.5])
        (out,) = adam_step(state, [p], [g])
        expect = -0.25 * g / (np.abs(g) + 1e-8)
        assert out == pytest.approx(expect, rel=1e-9)

    def test_sequence_matches_scalar_reference(self, rng):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
        p = rng.normal(size=4)
        ref_p = p.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        for t in range(1, 4):
            g = rng.normal(size=4)
            (p,) = adam_step(state, [p], [g])
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ref_p = ref_p - lr * (m / (1 - b1**t)) / (
                np.sqrt(v / (1 - b2**t)) + eps)
            assert p == pytest.approx(ref_p, rel=1e-12)

    def test_defaults(self):
        state = AdamState()
        assert (state.lr, state.beta1, state.beta2, state.eps) == (
            1e-4, 0.9, 0.999, 1e-8)


class TestGradCheck:
    def test_near_linear_case_tiny_error(self):
        feats = np.full((4, 1), 2.0)
        spec = plan_grid(2, 2, 1)

        def loss(assoc, state):
            return float(state.centers.sum()), None, np.ones_like(state.centers)

        report = grad_check(feats, spec, 1, loss, h=1e-5, tol=1e-4)
        assert report.passed
        assert report.max_rel_err <= 1e-10

    def test_combined_loss_fixture(self, rng):
        feats, spec = random_fixture(rng, k=5)
        labels_vec = rng.integers(0, 3, 64)
        loss = scale_invariant_loss(labels_vec, feats[:, :2].copy())
        report = grad_check(feats, spec, 3, loss, h=1e-5, tol=1e-4)
        assert report.passed, report

    def test_zero_tolerance_always_fails(self, rng):
        feats, spec = random_fixture(rng, w=4, h=4)

        def loss(assoc, state):
            return float(state.centers.sum()), None, np.ones_like(state.centers)

        report = grad_check(feats, spec, 1, loss, tol=0.0)
        assert not report.passed

    def test_probe_subset(self, rng):
        feats, spec = random_fixture(rng, w=4, h=4)

        def loss(assoc, state):
            return float(state.centers.sum()), None, np.ones_like(state.centers)

        report = grad_check(feats, spec, 2, loss, probes=7)
        assert report.n_probes == 7


class TestCheckpoints:
    def test_round_trip(self, tmp_path, rng):
        model = LinearModel(weights=rng.normal(size=(5, 15)),
                            bias=rng.normal(size=15))
        path = tmp_path / "model.ssnl"
        save_model(path, model, {"lr": 1e-4, "seed": 3})
        loaded, hyper = load_model(path)
        assert np.array_equal(loaded.weights, model.weights)
        assert np.array_equal(loaded.bias, model.bias)
        assert hyper["lr"] == 1e-4 and hyper["k"] == 20

    def test_header_layout(self, tmp_path):
        model = LinearModel.zeros(6)
        path = tmp_path / "model.ssnl"
        save_model(path, model)
        blob = path.read_bytes()
        assert blob[:4] == b"SSNL"
        assert int.from_bytes(blob[4:8], "little") == 1
        assert int.from_bytes(blob[8:12], "little") == 6
        assert len(blob) == 16 + 8 * 6

    def test_corrupt_cases(self, tmp_path):
        path = tmp_path / "model.ssnl"
        path.write_bytes(b"JUNKJUNKJUNKJUNK" + b"\x00" * 48)
        with pytest.raises(CheckpointError):
            load_model(path)
        path.write_bytes(b"SSNL" + (1).to_bytes(4, "little")
                         + (8).to_bytes(4, "little") + b"\x00" * 4 + b"\x00" * 7)
        with pytest.raises(CheckpointError):
            load_model(path)
        with pytest.raises(CheckpointError):
            load_model(tmp_path / "missing.ssnl")
        path.write_bytes(b"SS")
        with pytest.raises(CheckpointError):
            load_model(path)
