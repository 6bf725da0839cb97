import numpy as np
import pytest

from wristhr.nn import (
    AdamState,
    AvgPoolTo,
    Conv1d,
    Dense,
    HrEstimate,
    TemporalAttention,
    adam_step,
    gaussian_head,
    gaussian_nll,
    softplus,
)


class TestConv1d:
    def test_unit_impulse_kernel_is_identity(self, rng):
        conv = Conv1d(rng, 1, 1, kernel=1, stride=1, relu=False)
        conv.w[0, 0, 0] = 1.0
        conv.b[:] = 0.0
        x = rng.standard_normal((2, 1, 32))
        y, _ = conv.forward(x)
        assert np.allclose(y, x)

    def test_zero_kernel_bias_relu(self, rng):
        conv = Conv1d(rng, 1, 2, kernel=3, stride=1)
        conv.w[:] = 0.0
        conv.b[:] = [0.7, -0.3]
        y, _ = conv.forward(np.ones((1, 1, 16)))
        assert np.allclose(y[0, 0], 0.7)
        assert np.allclose(y[0, 1], 0.0)  # ReLU clips the negative bias

    def test_matches_direct_summation(self, rng):
        conv = Conv1d(rng, 3, 4, kernel=5, stride=2, relu=False)
        x = rng.standard_normal((2, 3, 21))
        y, _ = conv.forward(x)
        n_out = (21 - 5) // 2 + 1
        for b in range(2):
            for o in range(4):
                for t in range(n_out):
                    want = conv.b[o] + sum(
                        x[b, c, t * 2 + j] * conv.w[o, c, j]
                        for c in range(3)
                        for j in range(5)
                    )
                    assert abs(y[b, o, t] - want) < 1e-9

    def test_shape_mismatch_rejected(self, rng):
        conv = Conv1d(rng, 2, 4, kernel=3, stride=1)
        with pytest.raises(ValueError):
            conv.forward(np.zeros((1, 3, 16)))


class TestTemporalAttention:
    def test_single_timestep_identity_projections(self, rng):
        d = 6
        att = TemporalAttention(rng, d, heads=1, projections="on")
        att.wq = np.eye(d)
        att.wk = np.eye(d)
        att.wv = np.eye(d)
        att.wo = np.eye(d)
        e_cur = rng.standard_normal((1, 1, d))
        e_prev = rng.standard_normal((1, 1, d))
        out, _ = att.forward(e_cur, e_prev)
        assert np.allclose(out, e_cur + e_prev, atol=1e-12)

    def test_identical_prev_rows_give_convex_combination(self, rng):
        d, t = 4, 5
        att = TemporalAttention(rng, d, heads=1, projections="on")
        att.wq = np.eye(d)
        att.wk = np.eye(d)
        att.wv = np.eye(d)
        att.wo = np.eye(d)
        v = rng.standard_normal(d)
        e_prev = np.tile(v, (1, t, 1))
        e_cur = rng.standard_normal((1, t, d))
        out, _ = att.forward(e_cur, e_prev)
        assert np.allclose(out, e_cur + v[None, None, :], atol=1e-10)

    def test_matches_naive_loop(self, rng):
        d, t, h = 8, 6, 2
        att = TemporalAttention(rng, d, heads=h, projections="on")
        e_cur = rng.standard_normal((1, t, d))
        e_prev = rng.standard_normal((1, t, d))
        out, _ = att.forward(e_cur, e_prev)
        dh = d // h
        acc = np.zeros((t, d))
        for head in range(h):
            sl = slice(head * dh, (head + 1) * dh)
            q = (e_cur[0] @ att.wq)[:, sl]
            k = (e_prev[0] @ att.wk)[:, sl]
            v = (e_prev[0] @ att.wv)[:, sl]
            for i in range(t):
                logits = np.array([q[i] @ k[j] / np.sqrt(dh) for j in range(t)])
                w = np.exp(logits - logits.max())
                w /= w.sum()
                acc[i, sl] = sum(w[j] * v[j] for j in range(t))
        want = e_cur[0] + acc @ att.wo
        assert np.max(np.abs(out[0] - want)) < 1e-8

    def test_softmax_rows_sum_to_one_large_logits(self, rng):
        d = 4
        att = TemporalAttention(rng, d, heads=1, projections="off")
        e_cur = rng.standard_normal((1, 3, d)) * 500.0  # would overflow naive exp
        e_prev = rng.standard_normal((1, 3, d)) * 500.0
        out, cache = att.forward(e_cur, e_prev)
        attn = cache[5]
        assert np.all(np.isfinite(out))
        assert np.max(np.abs(attn.sum(axis=-1) - 1.0)) < 1e-9

    def test_zero_value_projection_residual_identity(self, rng):
        d = 6
        att = TemporalAttention(rng, d, heads=2, projections="on")
        att.wv[:] = 0.0
        e_cur = rng.standard_normal((2, 4, d))
        e_prev = rng.standard_normal((2, 4, d))
        out, _ = att.forward(e_cur, e_prev)
        assert np.array_equal(out, e_cur)

    def test_literal_mode_matches_definition(self, rng):
        d, t = 5, 4
        att = TemporalAttention(rng, d, heads=1, projections="off")
        e_cur = rng.standard_normal((1, t, d))
        e_prev = rng.standard_normal((1, t, d))
        out, _ = att.forward(e_cur, e_prev)
        logits = e_cur[0] @ e_prev[0].T / np.sqrt(d)
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        want = e_cur[0] + w @ e_prev[0]
        assert np.max(np.abs(out[0] - want)) < 1e-10

    def test_indivisible_heads_rejected(self, rng):
        with pytest.raises(ValueError):
            TemporalAttention(rng, d=6, heads=4, projections="on")


class TestGaussianHead:
    def test_raw_sigma_zero(self):
        est = gaussian_head(np.array([100.0, 0.0]))
        assert est.mu_hr == 100.0
        assert abs(est.sigma_hr - (np.log(2.0) + 1e-3)) < 1e-12

    def test_raw_sigma_minus_20_hits_floor(self):
        est = gaussian_head(np.array([70.0, -20.0]))
        assert abs(est.sigma_hr - 1e-3) < 1e-8

    def test_raw_sigma_10(self):
        est = gaussian_head(np.array([70.0, 10.0]))
        assert abs(est.sigma_hr - (np.log1p(np.exp(10.0)) + 1e-3)) < 1e-12
        assert abs(est.sigma_hr - 10.0010) < 1e-3

    def test_sigma_always_positive(self, rng):
        for _ in range(1000):
            raw = rng.standard_normal(2) * 50.0
            assert gaussian_head(raw).sigma_hr > 0

    def test_wrong_size_rejected(self):
        with pytest.raises(ValueError):
            gaussian_head(np.array([1.0, 2.0, 3.0]))


class TestGaussianNll:
    def test_at_mean_unit_sigma(self):
        est = HrEstimate(mu_hr=70.0, sigma_hr=1.0)
        assert abs(gaussian_nll(est, 70.0) - 0.5 * np.log(2 * np.pi)) < 1e-12

    def test_one_sigma_case(self):
        est = HrEstimate(mu_hr=70.0, sigma_hr=3.0)
        want = 0.5 * np.log(2 * np.pi * 9.0) + 0.5
        assert abs(gaussian_nll(est, 73.0) - want) < 1e-12

    def test_direct_evaluation(self):
        est = HrEstimate(mu_hr=70.0, sigma_hr=5.0)
        want = 0.5 * np.log(2 * np.pi * 25.0) + 100.0 / 50.0
        assert abs(gaussian_nll(est, 80.0) - want) < 1e-12
        assert abs(gaussian_nll(est, 80.0) - 4.52831) < 1e-4

    def test_minimized_at_mu_equals_y(self):
        y = 82.0
        grid = np.linspace(40.0, 160.0, 481)
        vals = [gaussian_nll(HrEstimate(mu_hr=float(m), sigma_hr=4.0), y) for m in grid]
        assert abs(grid[int(np.argmin(vals))] - y) < 0.3


class TestAdam:
    def test_first_step_is_signed_lr(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.array([10.0, -0.01, 1e-6])}
        state = AdamState.for_params(params)
        before = params["w"].copy()
        adam_step(params, grads, state, lr=5e-4)
        step = params["w"] - before
        # bias-corrected first step ~ -lr * sign(g) (epsilon-blunted for tiny g)
        assert np.all(np.abs(step) <= 5e-4 * (1 + 1e-6))
        assert abs(step[0] + 5e-4) < 1e-8
        assert abs(step[1] - 5e-4) < 1e-8
        assert np.sign(step[2]) == -1

    def test_zero_grad_keeps_params_decays_state(self):
        params = {"w": np.array([1.0])}
        state = AdamState.for_params(params)
        state.m["w"][:] = 1.0
        state.v["w"][:] = 1.0
        adam_step(params, {"w": np.zeros(1)}, state, lr=0.1)
        # m decayed toward zero, v decayed, params moved only by the decayed m
        assert state.m["w"][0] == pytest.approx(0.9)
        assert state.v["w"][0] == pytest.approx(0.999)

    def test_two_steps_match_scalar_recurrence(self):
        lr, b1, b2, eps = 0.0005, 0.9, 0.999, 1e-8
        g = 0.37
        params = {"w": np.array([0.5])}
        state = AdamState.for_params(params)
        adam_step(params, {"w": np.array([g])}, state, lr=lr)
        adam_step(params, {"w": np.array([g])}, state, lr=lr)
        # hand recurrence
        w, m, v = 0.5, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert abs(params["w"][0] - w) < 1e-12


class TestPoolAndDense:
    def test_avgpool_mean(self, rng):
        pool = AvgPoolTo(4)
        x = rng.standard_normal((1, 2, 8))
        y, _ = pool.forward(x)
        assert np.allclose(y[0, 0, 0], x[0, 0, :2].mean())

    def test_dense_linear(self, rng):
        d = Dense(rng, 3, 2, relu=False)
        x = rng.standard_normal((4, 3))
        y, _ = d.forward(x)
        assert np.allclose(y, x @ d.w + d.b)
