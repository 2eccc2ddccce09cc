import numpy as np
import pytest
import scipy.linalg

from ldsgd import problems as P
from ldsgd.errors import InfeasibleProblemError, InvalidArgumentError
from ldsgd.rng import NoiseStream


def test_hand_example():
    p = P.QuadraticProblem(np.array([[1.0]]), np.array([[-1.0], [1.0]]))
    c = p.constants()
    assert c.noniid_kappa_sq == 1.0
    assert p.minimizer()[0] == 0.0
    assert p.min_value() == 0.0


def test_zero_heterogeneity():
    p = P.make_quadratic(5, 4, kappa_target=0.0, seed=1)
    assert np.all(p.offsets == p.offsets[0])
    assert p.constants().noniid_kappa_sq == 0.0


def test_exact_constants():
    p = P.make_quadratic(8, 5, kappa_target=0.5, sigma=0.3, seed=2)
    c = P.exact_constants(p)
    assert c.noniid_kappa_sq == 0.25
    assert c.grad_variance == 0.3**2
    assert c.grad_variance == pytest.approx(0.09, rel=1e-15)
    assert not c.estimated


def test_smoothness_against_independent_eigensolver():
    p = P.make_quadratic(12, 3, cond=50.0, seed=3)
    top = scipy.linalg.eigh(p.hessian, eigvals_only=True, driver="ev")[-1]
    assert p.constants().smoothness_l == pytest.approx(top, abs=1e-10)


def test_heterogeneity_is_x_independent(rng):
    p = P.make_quadratic(6, 4, kappa_target=0.7, seed=4)
    for _ in range(100):
        x = rng.standard_normal(6) * 3
        g = np.array([p.node_gradient(k, x) for k in range(4)])
        emp = np.mean(np.sum((g - p.full_gradient(x)) ** 2, axis=1))
        assert emp == pytest.approx(p.constants().noniid_kappa_sq, abs=1e-12)


def test_shared_parts_do_not_depend_on_node_count():
    a = P.make_quadratic(7, 2, seed=5)
    b = P.make_quadratic(7, 8, seed=5)
    assert np.array_equal(a.hessian, b.hessian)
    assert np.allclose(a.mean_offset, b.mean_offset, atol=1e-14)
    assert a.constants().init_error == pytest.approx(b.constants().init_error, rel=1e-12)


def test_infeasible_single_node():
    with pytest.raises(InfeasibleProblemError):
        P.make_quadratic(3, 1, kappa_target=0.5)


def test_quadratic_noise_unbiased_with_exact_variance():
    p = P.make_quadratic(4, 2, sigma=0.5, seed=6)
    x = np.ones(4)
    noise = p.draws(NoiseStream(9), np.arange(1, 100_001))[:, 0, :]
    grads = p.node_gradient(0, x) + noise
    se = p.sigma / 2 / np.sqrt(noise.shape[0])
    assert np.all(np.abs(grads.mean(axis=0) - p.node_gradient(0, x)) < 5 * se)
    assert np.mean(np.sum(noise**2, axis=1)) <= p.sigma**2 * (1 + 1e-2)


def test_logistic_gradient_matches_finite_differences(rng):
    p = P.make_logistic(5, 3, 20, 0.5, seed=1)
    h = 1e-6
    for _ in range(10):
        x = rng.standard_normal(5)
        k, i = int(rng.integers(3)), int(rng.integers(20))
        g = p.sample_gradient(k, i, x)
        fd = np.array([
            (p.sample_loss(k, i, x + h * e) - p.sample_loss(k, i, x - h * e)) / (2 * h) for e in np.eye(5)
        ])
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1e-3)


def test_logistic_smoothness_on_segments(rng):
    p = P.make_logistic(6, 4, 30, 0.3, seed=2)
    L = p.smoothness_estimate()
    for _ in range(100):
        k = int(rng.integers(4))
        x, y = rng.standard_normal(6) * 2, rng.standard_normal(6) * 2
        lhs = np.linalg.norm(p.node_gradient(k, x) - p.node_gradient(k, y))
        assert lhs <= L * np.linalg.norm(x - y) * (1 + 1e-6)


def test_logistic_stochastic_gradient_unbiased():
    p = P.make_logistic(4, 2, 15, 0.0, seed=3)
    x = np.full(4, 0.3)
    draws = p.draws(NoiseStream(1), np.arange(1, 100_001))[:, 1, :]
    g = np.array([p.stochastic_node_gradient(1, x, d) for d in draws])
    se = g.std(axis=0) / np.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0) - p.node_gradient(1, x)) < 5 * se + 1e-15)


def test_logistic_skew_and_flags():
    iid = P.make_logistic(5, 4, 40, 0.0, seed=4)
    skew = P.make_logistic(5, 4, 40, 1.0, seed=4)
    assert iid.single_class_nodes == ()
    assert skew.single_class_nodes == (0, 1, 2, 3)
    ci, cs = iid.constants(), skew.constants()
    assert ci.estimated and cs.estimated
    assert "single-class" in cs.note and "ball" in ci.note
    assert ci.noniid_kappa_sq >= 0.0

    def spread_at_minimizer(p):
        x = p.minimizer()
        g = np.array([p.node_gradient(k, x) for k in range(4)])
        return np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1))

    assert spread_at_minimizer(skew) > 5 * spread_at_minimizer(iid)
    assert cs.noniid_kappa_sq > ci.noniid_kappa_sq


def test_logistic_needs_ten_samples():
    with pytest.raises(InvalidArgumentError):
        P.make_logistic(3, 2, 5)


def test_reproducible_construction():
    a, b = P.make_logistic(4, 3, 12, 0.4, seed=7), P.make_logistic(4, 3, 12, 0.4, seed=7)
    assert all(np.array_equal(x, y) for x, y in zip(a.features, b.features))
    assert np.array_equal(P.make_quadratic(5, 3, seed=8).offsets, P.make_quadratic(5, 3, seed=8).offsets)
