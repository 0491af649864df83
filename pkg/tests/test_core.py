"""Parameter store, Gaussian KL, GRU/MLP conventions, stable softmax ops."""

import numpy as np
import pytest
from scipy import special

from latentdialog.numeric import core, rng
from latentdialog.numeric import tape as T
from latentdialog.numeric.core import GaussianParams, ModelParams

RNG = np.random.default_rng(7)


class TestGaussianParams:
    def test_log_var_is_clamped_on_construction(self):
        g = GaussianParams(mu=np.zeros(3), log_var=np.array([-50.0, 0.0, 50.0]))
        np.testing.assert_allclose(g.log_var, [-10.0, 0.0, 10.0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            GaussianParams(mu=np.zeros(3), log_var=np.zeros(4))

    def test_dim(self):
        assert GaussianParams(mu=np.zeros(5), log_var=np.zeros(5)).dim == 5


class TestGaussianKL:
    def test_kl_standard_vs_shifted_unit(self):
        # KL(N(1,1) || N(0,1)) = mu^2 / 2 = 0.5 per dimension.
        q = GaussianParams(mu=np.array([1.0]), log_var=np.array([0.0]))
        p = GaussianParams(mu=np.array([0.0]), log_var=np.array([0.0]))
        assert core.gaussian_kl(q, p) == pytest.approx(0.5, abs=1e-12)

    def test_kl_variance_mismatch(self):
        # KL(N(0, e) || N(0, 1)) = (e - 1 - 1)/2 = (e-2)/2.
        q = GaussianParams(mu=np.array([0.0]), log_var=np.array([1.0]))
        p = GaussianParams(mu=np.array([0.0]), log_var=np.array([0.0]))
        assert core.gaussian_kl(q, p) == pytest.approx(0.3591409142295225, abs=1e-12)

    def test_kl_self_is_zero_exactly(self):
        for _ in range(100):
            d = int(RNG.integers(1, 9))
            q = GaussianParams(mu=RNG.normal(size=d), log_var=RNG.uniform(-2, 2, d))
            assert core.gaussian_kl(q, q) == 0.0

    def test_kl_is_nonnegative(self):
        for _ in range(50):
            d = int(RNG.integers(1, 9))
            q = GaussianParams(mu=RNG.normal(size=d), log_var=RNG.uniform(-2, 2, d))
            p = GaussianParams(mu=RNG.normal(size=d), log_var=RNG.uniform(-2, 2, d))
            assert core.gaussian_kl(q, p) >= 0.0

    def test_kl_sums_over_dimensions(self):
        q = GaussianParams(mu=np.array([1.0, 1.0]), log_var=np.zeros(2))
        p = GaussianParams(mu=np.zeros(2), log_var=np.zeros(2))
        assert core.gaussian_kl(q, p) == pytest.approx(1.0, abs=1e-12)

    def test_dimension_mismatch_rejected(self):
        q = GaussianParams(mu=np.zeros(2), log_var=np.zeros(2))
        p = GaussianParams(mu=np.zeros(3), log_var=np.zeros(3))
        with pytest.raises(ValueError):
            core.gaussian_kl(q, p)

    def test_kl_terms_matches_closed_form_per_row(self):
        b, d = 6, 4
        mu_q = RNG.normal(size=(b, d))
        lv_q = RNG.uniform(-2, 2, (b, d))
        mu_p = RNG.normal(size=(b, d))
        lv_p = RNG.uniform(-2, 2, (b, d))
        got = core.kl_terms(mu_q, lv_q, mu_p, lv_p)
        for i in range(b):
            want = core.gaussian_kl(GaussianParams(mu_q[i], lv_q[i]),
                                    GaussianParams(mu_p[i], lv_p[i]))
            assert got[i] == pytest.approx(want, rel=1e-10)

    def test_kl_terms_gradient_flows_to_all_four_inputs(self):
        b, d = 2, 3
        tp = T.Tape()
        args = [tp.leaf(RNG.normal(size=(b, d))) for _ in range(2)]
        args += [tp.leaf(RNG.uniform(-1, 1, (b, d))) for _ in range(2)]
        mu_q, mu_p, lv_q, lv_p = args
        tp.backward(T.sum_axis(core.kl_terms(mu_q, lv_q, mu_p, lv_p)))
        for v in args:
            assert v.grad is not None and np.any(v.grad != 0.0)


class TestReparameterize:
    def test_formula(self):
        g = GaussianParams(mu=np.array([1.0, -1.0]), log_var=np.array([0.0, 2.0]))
        eps = np.array([0.5, 0.5])
        want = g.mu + np.exp(0.5 * g.log_var) * eps
        np.testing.assert_allclose(core.reparameterize(g, eps), want)

    def test_zero_noise_returns_mean(self):
        g = GaussianParams(mu=np.array([3.0]), log_var=np.array([1.0]))
        np.testing.assert_allclose(core.reparameterize(g, np.zeros(1)), [3.0])


class TestGruStep:
    def test_zero_parameters_halve_the_state(self):
        # u = r = sigmoid(0) = 1/2, hbar = tanh(0) = 0, h' = h/2.
        h = RNG.normal(size=(3, 4))
        x = RNG.normal(size=(3, 5))
        cell = {n: np.zeros((5, 4) if n.startswith("W") else (4, 4) if n.startswith("U") else 4)
                for n in core.GRU_GATE_NAMES}
        np.testing.assert_allclose(core.gru_step(cell, x, h), 0.5 * h, rtol=1e-12)

    def test_matches_manual_gate_equations(self):
        d_in, d_h, b = 4, 3, 2
        cell = {}
        for gate in ("u", "g", "h"):
            cell[f"W_{gate}"] = RNG.normal(size=(d_in, d_h))
            cell[f"U_{gate}"] = RNG.normal(size=(d_h, d_h))
            cell[f"b_{gate}"] = RNG.normal(size=d_h)
        x = RNG.normal(size=(b, d_in))
        h = RNG.normal(size=(b, d_h))

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        u = sig(x @ cell["W_u"] + h @ cell["U_u"] + cell["b_u"])
        r = sig(x @ cell["W_g"] + h @ cell["U_g"] + cell["b_g"])
        hbar = np.tanh(x @ cell["W_h"] + (r * h) @ cell["U_h"] + cell["b_h"])
        want = (1.0 - u) * h + u * hbar
        np.testing.assert_allclose(core.gru_step(cell, x, h), want, rtol=1e-12)

    def test_precomputed_agrees_with_plain_step(self):
        d_in, d_h, b = 4, 3, 2
        cell = {}
        for gate in ("u", "g", "h"):
            cell[f"W_{gate}"] = RNG.normal(size=(d_in, d_h))
            cell[f"U_{gate}"] = RNG.normal(size=(d_h, d_h))
            cell[f"b_{gate}"] = RNG.normal(size=d_h)
        x = RNG.normal(size=(b, d_in))
        h = RNG.normal(size=(b, d_h))
        pre = core.gru_step_precomputed(
            cell,
            x @ cell["W_u"] + cell["b_u"],
            x @ cell["W_g"] + cell["b_g"],
            x @ cell["W_h"] + cell["b_h"],
            h,
        )
        np.testing.assert_allclose(pre, core.gru_step(cell, x, h), rtol=1e-12)

    def test_update_gate_interpolates_between_old_and_candidate(self):
        # Large positive b_u forces u ~ 1: the state jumps to the candidate.
        d = 3
        cell = {n: np.zeros((d, d)) if n[0] in "WU" else np.zeros(d)
                for n in core.GRU_GATE_NAMES}
        cell["b_u"] = np.full(d, 50.0)
        h = RNG.normal(size=(1, d))
        x = RNG.normal(size=(1, d))
        out = core.gru_step(cell, x, h)
        np.testing.assert_allclose(out, np.zeros((1, d)), atol=1e-12)


class TestMlpAndSoftmax:
    def test_mlp_forward_matches_manual(self):
        x = RNG.normal(size=(3, 4))
        w1, b1 = RNG.normal(size=(4, 5)), RNG.normal(size=5)
        w2, b2 = RNG.normal(size=(5, 2)), RNG.normal(size=2)
        want = np.tanh(x @ w1 + b1) @ w2 + b2
        np.testing.assert_allclose(core.mlp_forward(x, w1, b1, w2, b2), want, rtol=1e-12)

    def test_affine(self):
        x = RNG.normal(size=(2, 3))
        w, b = RNG.normal(size=(3, 4)), RNG.normal(size=4)
        np.testing.assert_allclose(core.affine(x, w, b), x @ w + b, rtol=1e-12)

    def test_softmax_xent_oracle(self):
        # -log softmax([1,2,3])[0] = log(e + e^2 + e^3) - 1.
        got = core.softmax_xent(np.array([1.0, 2.0, 3.0]), 0)
        assert got == pytest.approx(2.4076059644443806, abs=1e-12)

    def test_softmax_xent_is_shift_invariant(self):
        logits = RNG.normal(size=5)
        a = core.softmax_xent(logits, 2)
        b = core.softmax_xent(logits + 1000.0, 2)
        assert a == pytest.approx(b, abs=1e-9)

    def test_log_softmax_matches_scipy(self):
        logits = RNG.normal(size=(3, 6))
        np.testing.assert_allclose(core.log_softmax(logits),
                                   special.log_softmax(logits, axis=-1), rtol=1e-12)

    def test_softmax_sums_to_one_under_extreme_logits(self):
        p = core.softmax(np.array([1e4, 0.0, -1e4]))
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert p[0] == pytest.approx(1.0, abs=1e-12)


class TestModelParams:
    def test_add_value_grad_roundtrip(self):
        p = ModelParams(np.float32)
        p.add("w", np.ones((2, 2)))
        assert p.value("w").dtype == np.float32
        assert p.grad("w").shape == (2, 2)
        assert "w" in p
        assert p.names() == ["w"]

    def test_duplicate_name_rejected(self):
        p = ModelParams()
        p.add("w", np.ones(2))
        with pytest.raises(ValueError):
            p.add("w", np.ones(2))

    def test_set_value_shape_checked(self):
        p = ModelParams()
        p.add("w", np.ones((2, 3)))
        with pytest.raises(ValueError):
            p.set_value("w", np.ones((3, 2)))
        p.set_value("w", np.zeros((2, 3)))
        assert not p.value("w").any()

    def test_registration_order_is_stable(self):
        p = ModelParams()
        for name in ("z", "a", "m"):
            p.add(name, np.zeros(1))
        assert p.names() == ["z", "a", "m"]

    def test_zero_grad_and_total_size(self):
        p = ModelParams()
        p.add("w", np.ones((2, 3)))
        p.add("b", np.ones(3))
        p.grad("w")[...] = 5.0
        p.zero_grad()
        assert not p.grad("w").any()
        assert p.total_size() == 9

    def test_grad_global_norm(self):
        p = ModelParams(np.float64)
        p.add("w", np.zeros(2))
        p.add("b", np.zeros(1))
        p.grad("w")[...] = [3.0, 0.0]
        p.grad("b")[...] = [4.0]
        assert p.grad_global_norm() == pytest.approx(5.0, abs=1e-12)

    def test_astype_copies(self):
        p = ModelParams(np.float32)
        p.add("w", np.ones(2))
        q = p.astype(np.float64)
        q.value("w")[...] = 7.0
        assert p.value("w")[0] == 1.0
        assert q.dtype == np.float64
