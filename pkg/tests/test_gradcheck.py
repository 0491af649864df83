"""The finite-difference checker must accept correct gradients and flag wrong ones."""

import numpy as np

from latentdialog.numeric.core import ModelParams
from latentdialog.numeric.gradcheck import grad_check


def quadratic_setup(plant_bug=False):
    """loss = sum(a * w^2) + sum(b * w): gradient 2 a w + b, known exactly."""
    rng = np.random.default_rng(3)
    p = ModelParams(np.float64)
    p.add("w", rng.normal(size=(4, 3)))
    a = rng.uniform(0.5, 2.0, (4, 3))
    b = rng.normal(size=(4, 3))

    def loss_fn(compute_grad=False):
        w = p.value("w")
        if compute_grad:
            g = 2.0 * a * w + b
            if plant_bug:
                g = g.copy()
                g[0, 0] *= 1.5
            p.grad("w")[...] += g
        return float(np.sum(a * w * w) + np.sum(b * w))

    return loss_fn, p


class TestGradCheck:
    def test_correct_gradient_passes_every_coordinate(self):
        loss_fn, p = quadratic_setup()
        report = grad_check(loss_fn, p, h=1e-4)
        assert report.n_checked == 12
        assert report.n_ok == 12
        assert report.fraction_ok == 1.0
        assert report.max_rel_error < 1e-6
        assert report.violations == []

    def test_planted_wrong_coordinate_is_flagged(self):
        loss_fn, p = quadratic_setup(plant_bug=True)
        report = grad_check(loss_fn, p, h=1e-4)
        assert report.n_ok == 11
        assert len(report.violations) == 1
        name, idx, _, _, rel = report.violations[0]
        assert (name, idx) == ("w", 0)
        assert rel > 0.1
        assert report.worst == ("w", 0)

    def test_parameters_are_restored_after_perturbation(self):
        loss_fn, p = quadratic_setup()
        before = p.value("w").copy()
        grad_check(loss_fn, p)
        np.testing.assert_array_equal(p.value("w"), before)

    def test_near_zero_gradients_skip_the_relative_test(self):
        p = ModelParams(np.float64)
        p.add("w", np.zeros(3))

        def loss_fn(compute_grad=False):
            w = p.value("w")
            if compute_grad:
                p.grad("w")[...] += 4.0 * w ** 3
            return float(np.sum(w ** 4))

        # At w=0 both analytic and numeric gradients are ~0; the atol
        # floor must keep these from counting as violations.
        report = grad_check(loss_fn, p, h=1e-3)
        assert report.fraction_ok == 1.0

    def test_violation_list_is_capped(self):
        p = ModelParams(np.float64)
        p.add("w", np.ones(30))

        def loss_fn(compute_grad=False):
            if compute_grad:
                p.grad("w")[...] += 99.0  # wrong everywhere
            return float(np.sum(p.value("w") ** 2))

        report = grad_check(loss_fn, p, max_violations=5)
        assert report.n_ok == 0
        assert len(report.violations) == 5
