import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gtlab.algorithms import (
    PDState,
    SampleStream,
    advance,
    csgd_init,
    csgd_step,
    dsgd_init,
    dsgd_step,
    gt_dual,
    gt_init,
    gt_pd_init,
    gt_pd_step,
    gt_step,
    init_state,
    stacked_iterate,
)
from gtlab.errors import DimensionError, StateError
from gtlab.problems import make_linreg, make_quadratic
from gtlab.topology import CombinationMatrix, build_topology, combination_matrix


def _W(kind, n, rule="uniform"):
    return combination_matrix(build_topology(kind, n), rule)


def test_gt_against_kronecker_oracle():
    n, d, alpha = 6, 3, 0.1
    p = make_quadratic(n, d, seed=4).noiseless()
    W = _W("ring", n)
    # straight-line oracle on vectorized (n*d) iterates with the lifted matrix
    Wk = np.kron(W.W, np.eye(d))
    Hk = np.zeros((n * d, n * d))
    for i in range(n):
        Hk[i * d:(i + 1) * d, i * d:(i + 1) * d] = p.Q[i]
    c = np.concatenate([p.Q[i] @ p.x_local[i] for i in range(n)])
    grad = lambda v: Hk @ v - c
    x = np.random.default_rng(0).standard_normal(n * d)
    g = grad(x)
    s = gt_init(x.reshape(n, d), p)
    for _ in range(10):
        x_new = Wk @ (x - alpha * g)
        g = Wk @ (g + grad(x_new) - grad(x))
        x = x_new
        s = gt_step(s, W, p, alpha)
    np.testing.assert_allclose(s.x.ravel(), x, atol=1e-12)
    np.testing.assert_allclose(s.g.ravel(), g, atol=1e-12)


def test_single_agent_gt_is_sgd():
    p = make_linreg(1, 4, seed=2, sigma2_draws=0)
    W = _W("ring", 1)
    sa, sb = SampleStream(p, 5), SampleStream(p, 5)
    s = gt_init(np.zeros((1, 4)), p, sa)
    x = np.zeros((1, 4))
    xi = sb.next()
    for _ in range(20):
        x = x - 0.1 * p.sample_grad(x, xi)
        xi = sb.next()
        s = gt_step(s, W, p, 0.1, sa)
        np.testing.assert_allclose(s.x, x, atol=1e-14)


def test_consensual_optimum_stationary():
    p = make_linreg(5, 3, sigma_v2=0.0, seed=1, sigma2_draws=0).noiseless()
    W = _W("ring", 5)
    x0 = np.broadcast_to(p.x_star, (5, 3)).copy()
    s = gt_init(x0, p)
    for _ in range(50):
        s = gt_step(s, W, p, 0.3)
    np.testing.assert_allclose(s.x, x0, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([("ring", 10), ("exponential", 16), ("complete", 5), ("ring", 7)]),
       st.sampled_from(["uniform", "metropolis", "lazy-uniform"]),
       st.floats(1e-3, 0.5), st.integers(0, 10_000))
def test_lemma1_equivalence(graph, rule, alpha, seed):
    kind, n = graph
    W = _W(kind, n, rule)
    p = make_linreg(n, 3, seed=seed % 50, sigma2_draws=0)
    sg, sp = SampleStream(p, seed), SampleStream(p, seed)
    x0 = np.random.default_rng(seed).standard_normal((n, 3))
    g = gt_step(gt_init(x0, p, sg), W, p, alpha, sg)
    q = gt_pd_init(x0, W, p, alpha, sp)
    for _ in range(100):
        assert np.max(np.abs(g.x - q.x)) <= 1e-10 * max(1.0, np.max(np.abs(g.x)))
        np.testing.assert_allclose(q.z.mean(axis=0), 0, atol=1e-10)
        g = gt_step(g, W, p, alpha, sg)
        q = gt_pd_step(q, W, p, alpha, sp)


def test_dual_recovered_from_gt_state():
    n = 10
    W = _W("ring", n)
    p = make_linreg(n, 3, seed=1, sigma2_draws=0)
    sg, sp = SampleStream(p, 9), SampleStream(p, 9)
    g = gt_step(gt_init(np.zeros((n, 3)), p, sg), W, p, 0.05, sg)
    q = gt_pd_init(np.zeros((n, 3)), W, p, 0.05, sp)
    for _ in range(30):
        np.testing.assert_allclose(gt_dual(g, W, 0.05), q.z, atol=1e-12)
        g = gt_step(g, W, p, 0.05, sg)
        q = gt_pd_step(q, W, p, 0.05, sp)


def test_pd_needs_initialization():
    p = make_quadratic(4, 2).noiseless()
    with pytest.raises(StateError):
        gt_pd_step(PDState.initial(np.zeros((4, 2))), _W("ring", 4), p, 0.1)
    s = advance("gt_pd", PDState.initial(np.zeros((4, 2))), _W("ring", 4), p, 0.1)
    assert s.k == 1


def test_pd_identity_weights_is_parallel_sgd():
    n, d = 4, 2
    p = make_linreg(n, d, seed=3, sigma2_draws=0)
    W = CombinationMatrix.from_matrix(np.eye(n))
    sa, sb = SampleStream(p, 1), SampleStream(p, 1)
    x0 = np.zeros((n, d))
    q = gt_pd_init(x0, W, p, 0.1, sa)
    x = x0 - 0.1 * p.sample_grad(x0, sb.next())
    for _ in range(20):
        np.testing.assert_allclose(q.x, x, atol=1e-14)
        q = gt_pd_step(q, W, p, 0.1, sa)
        x = x - 0.1 * p.sample_grad(x, sb.next())


def test_tracking_identity():
    n = 8
    p = make_quadratic(n, 3, seed=2).noiseless()
    W = _W("exponential", n)
    s = gt_init(np.random.default_rng(1).standard_normal((n, 3)), p)
    for _ in range(100):
        np.testing.assert_allclose(s.g.mean(axis=0), p.grad(s.x).mean(axis=0), atol=1e-10)
        s = gt_step(s, W, p, 0.1)


def test_one_draw_per_iteration():
    p = make_linreg(5, 2, seed=0, sigma2_draws=0)
    stream = SampleStream(p, 0)
    s = gt_init(np.zeros((5, 2)), p, stream)
    for _ in range(40):
        s = gt_step(s, _W("ring", 5), p, 0.1, stream)
    assert stream.draws == 41 and s.stochastic


def test_tracker_reuses_cached_sample():
    p = make_linreg(5, 2, seed=0, sigma2_draws=0)
    W = _W("ring", 5)
    stream = SampleStream(p, 3)
    s0 = gt_init(np.ones((5, 2)), p, stream)
    s1 = gt_step(s0, W, p, 0.1, stream)
    replay = SampleStream(p, 3)
    xi0, xi1 = replay.next(), replay.next()
    g1 = W.W @ (s0.g + p.sample_grad(s1.x, xi1) - p.sample_grad(s0.x, xi0))
    np.testing.assert_array_equal(s1.g, g1)


def test_dsgd_with_averaging_matches_csgd():
    n, d = 6, 3
    p = make_linreg(n, d, seed=2, sigma2_draws=0)
    W = _W("complete", n)
    sa, sb = SampleStream(p, 4), SampleStream(p, 4)
    a = dsgd_init(np.zeros((n, d)), p)
    b = csgd_init(np.zeros(d), p)
    for _ in range(50):
        a = dsgd_step(a, W, p, 0.05, sa)
        b = csgd_step(b, p, 0.05, sb)
        np.testing.assert_allclose(a.x.mean(axis=0), b.x, atol=1e-12)


def test_single_agent_baselines_are_sgd():
    p = make_linreg(1, 3, seed=6, sigma2_draws=0)
    W = _W("ring", 1)
    streams = [SampleStream(p, 2) for _ in range(3)]
    a = dsgd_init(np.zeros((1, 3)), p)
    b = csgd_init(np.zeros(3), p)
    g = gt_init(np.zeros((1, 3)), p, streams[2])
    for _ in range(30):
        a = dsgd_step(a, W, p, 0.1, streams[0])
        b = csgd_step(b, p, 0.1, streams[1])
        g = gt_step(g, W, p, 0.1, streams[2])
        np.testing.assert_allclose(a.x[0], b.x, atol=1e-14)
        np.testing.assert_allclose(g.x[0], b.x, atol=1e-14)


def test_dsgd_homogeneous_converges_exactly():
    n = 6
    p = make_quadratic(n, 3, sigma_v2=0.0, seed=3).noiseless()
    W = _W("ring", n)
    x0 = np.broadcast_to(np.ones(3), (n, 3)).copy()
    s = dsgd_init(x0, p)
    for _ in range(3000):
        s = dsgd_step(s, W, p, 0.2)
    assert np.max(np.abs(s.x - p.x_star)) <= 1e-12


def test_dimension_mismatch():
    p = make_quadratic(4, 2)
    with pytest.raises(DimensionError):
        gt_step(gt_init(np.zeros((4, 2)), p), _W("ring", 5), p, 0.1)
    with pytest.raises(DimensionError):
        dsgd_init(np.zeros((3, 2)), p)
    with pytest.raises(DimensionError):
        csgd_init(np.zeros(3), p)


def test_stream_chunking_is_invisible():
    p = make_linreg(4, 2, seed=0, sigma2_draws=0)
    a = SampleStream(p, 11, chunk=7)
    b = SampleStream(p, 11, chunk=256)
    for _ in range(30):
        np.testing.assert_array_equal(a.next(), b.next())


@pytest.mark.parametrize("algo", ["gt", "gt_pd", "dsgd", "csgd"])
def test_batched_matches_unbatched(algo):
    n = 6
    p = make_linreg(n, 2, seed=1, sigma2_draws=0)
    W = _W("ring", n)
    seeds = [5, 6, 7]
    batched = SampleStream(p, seeds)
    sb = init_state(algo, np.zeros((3, n, 2)), W, p, 0.05, batched)
    singles = [SampleStream(p, s) for s in seeds]
    ss = [init_state(algo, np.zeros((n, 2)), W, p, 0.05, st_) for st_ in singles]
    for _ in range(25):
        sb = advance(algo, sb, W, p, 0.05, batched)
        ss = [advance(algo, s, W, p, 0.05, st_) for s, st_ in zip(ss, singles)]
    for r in range(3):
        np.testing.assert_array_equal(stacked_iterate(sb, p)[r], stacked_iterate(ss[r], p))


def test_unknown_algorithm():
    p = make_quadratic(3, 2)
    with pytest.raises(ValueError):
        init_state("adam", np.zeros((3, 2)), _W("ring", 3), p, 0.1)
