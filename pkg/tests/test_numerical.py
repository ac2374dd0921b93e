import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unifcap.analytic import cbar_star, solve, unconstrained_solution
from unifcap.channel import CostFunction, make_geometry
from unifcap.errors import GridTooCoarseError, InvalidBudgetError
from unifcap.numerical import (
    BAConfig,
    ba_fixed_lambda,
    ba_solve,
    discretize,
    extract_support,
    sample_onto_grid,
)
from unifcap.verification import compare_clusters

SQRT = CostFunction.power(0.5)
SMALL = BAConfig(gin=201, gout=401, tol=1e-11, max_iter=100_000)


def overlap_matrix(geom, gin, gout):
    """W by direct interval intersection, one entry at a time."""
    b = geom.b
    edges = np.linspace(-b, 1 + b, gout + 1)
    W = np.zeros((gin, gout))
    for i, x in enumerate(np.linspace(0, 1, gin)):
        for m in range(gout):
            lo, hi = max(x - b, edges[m]), min(x + b, edges[m + 1])
            W[i, m] = max(hi - lo, 0.0) / (2 * b)
    return W


def dense_ba(W, c, lam, iters):
    """Textbook penalized Blahut-Arimoto on a dense matrix."""
    p = np.full(W.shape[0], 1.0 / W.shape[0])
    logW = np.log(np.where(W > 0, W, 1.0))
    for _ in range(iters):
        q = p @ W
        D = (W * (logW - np.log(np.where(q > 0, q, 1.0)))).sum(axis=1)
        p = p * np.exp(D - lam * c)
        p /= p.sum()
    q = p @ W
    D = (W * (logW - np.log(q))).sum(axis=1)
    return float(p @ D), p


# --- discretization ---------------------------------------------------------------


def test_overlap_matches_brute_force_r24_g9():
    g = make_geometry(2.4)
    chan = discretize(g, 9, 9)
    np.testing.assert_allclose(chan.matrix().toarray(), overlap_matrix(g, 9, 9), atol=1e-15)


@pytest.mark.parametrize("r, gin, gout", [(2.4, 31, 57), (4.0, 41, 81), (6.2, 25, 200)])
def test_overlap_matches_brute_force(r, gin, gout):
    g = make_geometry(r)
    chan = discretize(g, gin, gout)
    np.testing.assert_allclose(chan.matrix().toarray(), overlap_matrix(g, gin, gout), atol=1e-14)


@pytest.mark.parametrize("r", [1.0, 2.4, 4.0, 6.2])
def test_rows_sum_to_one(r):
    W = discretize(make_geometry(r), 2001, 4001).matrix()
    np.testing.assert_allclose(np.asarray(W.sum(axis=1)).ravel(), 1.0, atol=1e-14)
    assert W.data.min() >= 0


def test_first_row_sits_on_kernel_window():
    g = make_geometry(2.4)
    chan = discretize(g, 101, 301)
    row = chan.matrix().toarray()[0]
    centers = chan.output_centers
    assert np.all(row[centers > g.b + chan.cell_width] == 0)
    assert row[centers < g.b].sum() > 0.9


def test_grid_too_coarse():
    with pytest.raises(GridTooCoarseError):
        discretize(make_geometry(20.0), 11, 5)


def test_row_neg_entropy_matches_matrix():
    chan = discretize(make_geometry(2.4), 101, 313)
    W = chan.matrix().toarray()
    want = np.sum(np.where(W > 0, W * np.log(np.where(W > 0, W, 1)), 0), axis=1)
    np.testing.assert_allclose(chan.row_neg_entropy, want, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1.3, 2.4, 4.0, 6.2]), st.integers(2, 60), st.integers(0, 2**31))
def test_forward_backward_match_sparse(r, gin, seed):
    g = make_geometry(r)
    gout = int(math.ceil((1 + 2 * g.b) / (2 * g.b))) + gin
    chan = discretize(g, gin, gout)
    W = chan.matrix()
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(gin))
    f = rng.normal(size=gout)
    np.testing.assert_allclose(chan.forward(p), np.maximum(W.T @ p, 1e-300), atol=1e-14)
    np.testing.assert_allclose(chan.backward(f), W @ f, atol=1e-12)


# --- fixed multiplier ------------------------------------------------------------


def test_ba_matches_dense_textbook_iteration():
    g = make_geometry(2.4)
    chan = discretize(g, 41, 83)
    c = SQRT(chan.inputs)
    want, p_want = dense_ba(chan.matrix().toarray(), c, 0.7, 20000)
    res = ba_fixed_lambda(chan, SQRT, 0.7, BAConfig(gin=41, gout=83, tol=1e-13, max_iter=20000))
    assert res.capacity_nats == pytest.approx(want, abs=1e-9)


def test_unconstrained_r4_close_to_log5():
    g = make_geometry(4)
    res = ba_fixed_lambda(discretize(g), SQRT, 0.0, BAConfig(tol=1e-8))
    assert abs(res.capacity_nats - math.log(5)) <= 5e-3


def test_huge_multiplier_concentrates_at_zero():
    chan = discretize(make_geometry(2.4), 201, 401)
    res = ba_fixed_lambda(chan, SQRT, 1e4, SMALL)
    assert res.p[chan.inputs < 0.01].sum() > 0.999


def test_initialization_invariance():
    chan = discretize(make_geometry(2.4), 201, 401)
    rng = np.random.default_rng(3)
    cfg = BAConfig(gin=201, gout=401, tol=1e-9, max_iter=400_000)
    a = ba_fixed_lambda(chan, SQRT, 0.5, cfg)
    b = ba_fixed_lambda(chan, SQRT, 0.5, cfg, p0=rng.uniform(0.1, 1.0, 201))
    assert a.converged and b.converged
    assert a.capacity_nats == pytest.approx(b.capacity_nats, abs=1e-8)


def test_penalized_objective_monotone():
    chan = discretize(make_geometry(3.9), 201, 401)
    cfg = BAConfig(gin=201, gout=401, tol=1e-12, max_iter=3000, record_history=True)
    res = ba_fixed_lambda(chan, SQRT, 0.8, cfg)
    assert np.all(np.diff(res.history) >= -1e-13)


def test_negative_multiplier_rejected():
    with pytest.raises(ValueError):
        ba_fixed_lambda(discretize(make_geometry(2.4), 21, 41), SQRT, -1.0)


# --- budget-constrained solve ------------------------------------------------------


def test_inactive_budget_equals_unconstrained():
    chan = discretize(make_geometry(2.4), 201, 401)
    free = ba_fixed_lambda(chan, SQRT, 0.0, SMALL)
    res = ba_solve(chan, SQRT, 1.0, SMALL)
    assert res.lam == 0.0
    assert res.capacity_nats == pytest.approx(free.capacity_nats, abs=1e-9)


@pytest.mark.parametrize("cbar", [0.0, 1.5])
def test_budget_validation(cbar):
    with pytest.raises(InvalidBudgetError):
        ba_solve(discretize(make_geometry(2.4), 21, 41), SQRT, cbar)


def test_adaptive_and_bisection_agree():
    g = make_geometry(2.4)
    chan = discretize(g, 101, 201)
    kw = dict(gin=101, gout=201, tol=1e-7, max_iter=200_000, cost_tol=1e-8)
    a = ba_solve(chan, SQRT, 0.4, BAConfig(**kw))
    b = ba_solve(chan, SQRT, 0.4, BAConfig(**kw, strategy="bisection"))
    assert a.converged and b.converged
    # each capacity lies within its own duality gap of the common optimum
    assert abs(a.capacity_nats - b.capacity_nats) <= a.gap + b.gap + 1e-9
    assert a.lam == pytest.approx(b.lam, rel=1e-3)
    assert a.expected_cost <= 0.4 + 1e-8


def test_adaptive_result_is_feasible_and_bounded():
    g = make_geometry(2.4)
    chan = discretize(g, 201, 401)
    for cbar in (0.01, 0.2, 0.5):
        res = ba_solve(chan, SQRT, cbar, BAConfig(gin=201, gout=401, tol=1e-7, max_iter=50_000))
        assert res.expected_cost <= cbar + 1e-7
        # the discretized optimum cannot beat the continuous capacity by much
        assert res.capacity_nats <= solve(g, SQRT, cbar).capacity_nats + 5e-3


def test_capacity_monotone_in_budget():
    g, cost = make_geometry(2.4), CostFunction.power(0.7)
    chan = discretize(g, 201, 401)
    cfg = BAConfig(gin=201, gout=401, tol=1e-8, max_iter=100_000)
    cs = cbar_star(g, cost)
    caps = [ba_solve(chan, cost, float(c), cfg).capacity_nats
            for c in np.linspace(0.05, 1.0, 8) * cs]
    assert np.all(np.diff(caps) >= -1e-8)
    # the discrete critical budget differs slightly from the continuous one
    assert ba_solve(chan, cost, 1.0, cfg).capacity_nats >= caps[-1] - 1e-8


@pytest.mark.slow
def test_r24_sqrt_054_clusters_on_analytic_grid():
    g = make_geometry(2.4)
    chan = discretize(g)
    sol = solve(g, SQRT, 0.54)
    res = ba_solve(chan, SQRT, 0.54, BAConfig(tol=1e-7))
    assert abs(res.capacity_nats - sol.capacity_nats) <= 5e-3
    cl = extract_support(res, chan=chan)
    cmp = compare_clusters(cl.positions, cl.masses, sol.distribution, chan.inputs[1])
    assert cmp.max_mass_error <= 1e-3
    assert cmp.max_position_error <= 1.0


# --- support extraction -------------------------------------------------------------


def test_extract_sampled_case_i():
    g = make_geometry(2.4)
    chan = discretize(g)
    d = unconstrained_solution(g)
    cl = extract_support(sample_onto_grid(d.positions, d.masses, chan), chan=chan)
    assert cl.count == 6 and cl.discrete
    np.testing.assert_allclose(cl.masses, d.masses, atol=1e-15)
    np.testing.assert_allclose(cl.positions, d.positions, atol=0.5 / 2000)


def test_extract_point_mass():
    chan = discretize(make_geometry(2.4), 101, 201)
    cl = extract_support(sample_onto_grid([0.0], [1.0], chan), chan=chan)
    assert cl.count == 1 and cl.positions[0] == 0.0 and cl.largest_gap == 0


def test_extract_uniform_is_full_support():
    chan = discretize(make_geometry(2.4), 101, 201)
    res = sample_onto_grid(chan.inputs, np.full(101, 1 / 101), chan)
    cl = extract_support(res, chan=chan)
    assert cl.full_support and cl.count == 1 and cl.largest_gap == 0


def test_extract_bridge_merges_runs():
    chan = discretize(make_geometry(2.4), 101, 201)
    p = np.zeros(101)
    p[[10, 11, 13, 14, 40]] = 0.2
    res = sample_onto_grid(chan.inputs, p, chan)
    assert extract_support(res, chan=chan).count == 3
    merged = extract_support(res, chan=chan, bridge=1)
    assert merged.count == 2
    assert merged.largest_gap == 25
