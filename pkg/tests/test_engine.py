import warnings

import numpy as np
import pytest

from ldsgd import engine as E
from ldsgd import problems as P
from ldsgd import schemes as S
from ldsgd import topology as top
from ldsgd.errors import DivergenceError, InsufficientDataError, InvalidConfigError, PreconditionError

from reference import gradient_descent, local_sgd, plain_dsgd


@pytest.fixture
def quad():
    return P.make_quadratic(5, 4, kappa_target=0.5, sigma=0.3, seed=1)


def test_residual_examples():
    assert E.residual(np.ones((3, 4))) == 0.0
    assert E.residual(np.array([[0.0, 2.0]])) == 1.0
    x = np.random.default_rng(0).standard_normal((3, 5))
    assert E.residual(x + np.arange(3)[:, None]) == pytest.approx(E.residual(x), rel=1e-12)


def test_trace_rows_and_comms(quad):
    sc = S.scheme_i1(3, 2, 100)
    tr = E.run(quad, top.build_ring(4), sc, 0.05, eval_every=10)
    assert tr.steps == [1] + list(range(10, 101, 10))
    assert tr.residual[0] == 0.0
    assert tr.comms == [sc.count_through(t) for t in tr.steps]
    assert tr.total_comms == len(sc)
    assert all(v >= 0 for v in tr.residual)


def test_rows_at_last_step_when_not_multiple(quad):
    tr = E.run(quad, top.build_ring(4), S.scheme_i0(2, 25), 0.05, eval_every=10)
    assert tr.steps == [1, 10, 20, 25]


def test_complete_graph_consensus_after_gossip(quad):
    sc = S.scheme_i1(3, 1, 40)
    tr = E.run(quad, top.build_complete(4), sc, 0.1, log_gradients=True)
    states = tr.gradient_log.states + [tr.final_x]
    for t in sc.members:
        assert E.residual(states[t]) <= 1e-12


def test_dsgd_matches_reference_bitwise(quad):
    w = top.build_ring(4)
    for seed in (0, 5):
        tr = E.run(quad, w, S.scheme_i1(0, 1, 60), 0.05, seed=seed, log_gradients=True)
        states, final = plain_dsgd(quad, w.weights, 0.05, 60, seed)
        assert all(np.array_equal(a, b) for a, b in zip(tr.gradient_log.states, states))
        assert np.array_equal(tr.final_x, final)


def test_zero_step_size_keeps_consensus(quad):
    tr = E.run(quad, top.build_ring(4), S.scheme_i1(2, 2, 30), 0.0)
    assert set(tr.residual) == {0.0}
    assert len(set(tr.loss)) == 1


def test_rules_coincide_without_communication(quad):
    sc = S.explicit([], 30)
    a = E.run(quad, top.build_ring(4), sc, 0.1, rule="after")
    b = E.run(quad, top.build_ring(4), sc, 0.1, rule="before")
    assert np.array_equal(a.final_x, b.final_x)


def test_mean_preserved_by_mixing(rng):
    w = top.build_random_regular(8, 3, 2)
    x = rng.standard_normal((6, 8))
    np.testing.assert_allclose((x @ w.weights).mean(axis=1), x.mean(axis=1), atol=1e-12, rtol=0)


def test_mean_follows_averaged_gradient(quad):
    tr = E.run(quad, top.build_ring(4), S.scheme_i1(2, 1, 20), 0.1, log_gradients=True)
    log = tr.gradient_log
    states = log.states + [tr.final_x]
    for t in range(20):
        want = states[t].mean(axis=1) - 0.1 * log.grads[t].mean(axis=1)
        np.testing.assert_allclose(states[t + 1].mean(axis=1), want, atol=1e-12)


def test_consensus_contraction(rng):
    p = P.make_quadratic(3, 6, seed=2)
    w = top.build_ring(6, 0.4)
    x0 = rng.standard_normal((3, 6))
    tr = E.run(p, w, S.scheme_i0(1, 25), 0.0, x0=x0)
    for prev, cur in zip(tr.residual, tr.residual[1:]):
        assert cur <= w.rho**2 * prev * (1 + 1e-10)


def test_thread_count_does_not_change_results(quad):
    args = (quad, top.build_ring(4), S.scheme_i1(3, 2, 80), 0.05)
    a = E.run(*args, seed=3, threads=1)
    b = E.run(*args, seed=3, threads=4)
    assert list(a.rows()) == list(b.rows())
    assert np.array_equal(a.final_x, b.final_x)


def test_divergence_reports_step(quad):
    with pytest.raises(DivergenceError) as exc:
        E.run(quad, top.build_ring(4), S.scheme_i0(1, 5000), 50.0)
    assert 1 <= exc.value.step <= 5000
    assert exc.value.trace.steps


def test_dimension_mismatch(quad):
    with pytest.raises(InvalidConfigError):
        E.run(quad, top.build_ring(5), S.scheme_i0(1, 5), 0.1)
    with pytest.raises(InvalidConfigError):
        E.run(quad, top.build_ring(4), S.scheme_i0(1, 5), 0.1, horizon=6)


@pytest.mark.parametrize("rule", ["after", "before"])
def test_decomposition_identity(quad, rule):
    w = top.build_ring(4)
    sc = S.scheme_i2(4, 1, 1, 40)
    tr = E.run(quad, w, sc, 0.1, rule=rule, log_gradients=True)
    rep = E.verify_decomposition(tr, w, sc, 0.1, rule)
    assert rep.max_rel <= 1e-9
    assert rep.per_step[1] == 0.0
    wrong = E.verify_decomposition(tr, w, sc, 0.1, "before" if rule == "after" else "after")
    assert wrong.max_rel > 1e-3


def test_decomposition_needs_log(quad):
    sc = S.scheme_i0(2, 10)
    tr = E.run(quad, top.build_ring(4), sc, 0.1)
    with pytest.raises(PreconditionError):
        E.verify_decomposition(tr, top.build_ring(4), sc, 0.1)


def test_gradient_log_cap_disables_with_warning(quad):
    sc = S.scheme_i0(2, 10)
    with pytest.warns(RuntimeWarning):
        tr = E.run(quad, top.build_ring(4), sc, 0.1, log_gradients=True, log_cap_bytes=1000)
    assert not tr.gradient_log.enabled
    with pytest.raises(PreconditionError):
        E.verify_decomposition(tr, top.build_ring(4), sc, 0.1)


def test_local_sgd_reduction(quad):
    period = 4
    sc = S.scheme_i1(period - 1, 1, 40)
    tr = E.run(quad, top.build_complete(4), sc, 0.1, seed=2, log_gradients=True)
    states, final = local_sgd(quad, 0.1, 40, 2, period)
    for a, b in zip(tr.gradient_log.states + [tr.final_x], states + [final]):
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_gradient_descent_reduction():
    p = P.make_quadratic(5, 4, kappa_target=0.0, sigma=0.0, seed=3)
    tr = E.run(p, top.build_complete(4), S.scheme_i1(2, 2, 50), 0.3, log_gradients=True)
    path, final = gradient_descent(p, 0.3, 50)
    for a, b in zip(tr.gradient_log.states + [tr.final_x], path + [final]):
        np.testing.assert_allclose(a, np.repeat(b[:, None], 4, axis=1), atol=1e-12, rtol=0)


def test_lhs_estimator():
    p = P.make_quadratic(4, 4, kappa_target=0.0, sigma=0.0, seed=4)
    w = top.build_complete(4)
    vals = [E.estimate_theorem1_lhs(p, w, S.scheme_i0(1, T), 0.1, T, range(8)).mean for T in (20, 80, 320)]
    assert vals[0] > vals[1] > vals[2]
    with pytest.raises(InsufficientDataError):
        E.estimate_theorem1_lhs(p, w, S.scheme_i0(1, 10), 0.1, 10, range(4))


def test_lhs_seed_sets_agree(quad):
    w = top.build_ring(4)
    sc = S.scheme_i1(2, 2, 200)
    a = E.estimate_theorem1_lhs(quad, w, sc, 0.05, 200, range(0, 16))
    b = E.estimate_theorem1_lhs(quad, w, sc, 0.05, 200, range(100, 116))
    assert abs(a.mean - b.mean) <= 4 * np.hypot(a.stderr, b.stderr)


def test_csv_export(tmp_path, quad):
    tr = E.run(quad, top.build_ring(4), S.scheme_i0(2, 10), 0.1, eval_every=5)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,loss,grad_norm_sq,residual,comms"
    assert len(lines) == 1 + 3
    assert float(lines[1].split(",")[1]) == tr.loss[0]
