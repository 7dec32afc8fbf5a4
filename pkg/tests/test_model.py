"""Grid, weight, partition, and ellipticity contracts."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from divlab import (CoefficientField, SpaceTimeGrid, Weight, default_norm_box,
                    dyadic_partitions, validate_ellipticity, weighted_norm)


# ---------------------------------------------------------------------------
# grid basics


def test_grid_quad_weights_sum_to_volume():
    g = SpaceTimeGrid(box=((-2.0, 3.0), (0.0, 1.0)), shape=(21, 9), nt=4,
                      horizon=1.0)
    # trapezoid weights integrate constants exactly
    assert np.isclose(g.quad_weights().sum(), 5.0 * 1.0, rtol=0, atol=1e-12)


def test_grid_snap_picks_nearest_node():
    g = SpaceTimeGrid(box=((-1.0, 1.0),), shape=(11,), nt=2, horizon=1.0)
    src = g.snap(np.array([0.24]))
    assert np.isclose(g.positions()[src][0], 0.2)


def test_grid_rejects_too_few_nodes():
    with pytest.raises(ValueError):
        SpaceTimeGrid(box=((-1.0, 1.0),), shape=(2,), nt=2, horizon=1.0)


def test_weight_rho_values():
    w = Weight(1.0)
    pts = np.array([[0.0], [1.0], [3.0]])
    got = w.rho(pts)
    assert np.allclose(got, [1.0, 0.5, 0.1])


# ---------------------------------------------------------------------------
# weighted mixed norm


def test_weighted_norm_constant_oracle():
    # ||1||_{2,2,rho} over [0,1] x R: space integral of rho^2 is
    # int (1+x^2)^-2 dx = pi/2, so the norm is sqrt(pi/2).
    w = Weight(1.0)
    R = default_norm_box(w, 1)
    g = SpaceTimeGrid(box=((-R, R),), shape=(4097,), nt=8, horizon=1.0)
    f = np.ones((g.nt + 1, g.n_nodes))
    got = weighted_norm(f, w, 2, 2, g)
    assert abs(got - math.sqrt(math.pi / 2.0)) < 2e-3


def test_weighted_norm_requires_integrable_weight():
    # 4 * alpha must exceed d for rho^p to integrate at p = q = 2
    w = Weight(0.2)
    g = SpaceTimeGrid(box=((-2.0, 2.0),), shape=(33,), nt=2, horizon=1.0)
    f = np.ones((g.nt + 1, g.n_nodes))
    # norm itself is still finite on a truncated box; just sanity-check shape
    assert weighted_norm(f, w, 2, 2, g) > 0


@given(c=st.floats(min_value=0.01, max_value=50.0))
@settings(max_examples=40, deadline=None)
def test_weighted_norm_homogeneous(c):
    w = Weight(1.0)
    g = SpaceTimeGrid(box=((-3.0, 3.0),), shape=(33,), nt=4, horizon=1.0)
    rng = np.random.default_rng(0)
    f = rng.normal(size=(g.nt + 1, g.n_nodes))
    assert np.isclose(weighted_norm(c * f, w, 2, 4, g),
                      c * weighted_norm(f, w, 2, 4, g), rtol=1e-10)


@given(seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=40, deadline=None)
def test_weighted_norm_triangle(seed):
    w = Weight(1.0)
    g = SpaceTimeGrid(box=((-3.0, 3.0),), shape=(17,), nt=3, horizon=1.0)
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(g.nt + 1, g.n_nodes))
    h = rng.normal(size=(g.nt + 1, g.n_nodes))
    lhs = weighted_norm(f + h, w, 2, 2, g)
    rhs = weighted_norm(f, w, 2, 2, g) + weighted_norm(h, w, 2, 2, g)
    assert lhs <= rhs * (1 + 1e-12)


def test_weighted_norm_grid_refinement_consistent():
    w = Weight(1.0)
    vals = []
    for n in (65, 129, 257):
        g = SpaceTimeGrid(box=((-6.0, 6.0),), shape=(n,), nt=4, horizon=1.0)
        f = np.exp(-g.positions()[:, 0] ** 2)
        vals.append(weighted_norm(
            np.broadcast_to(f, (g.nt + 1, f.size)), w, 2, 2, g))
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])
    assert abs(vals[2] - vals[0]) / vals[2] < 1e-2


# ---------------------------------------------------------------------------
# partitions


def test_dyadic_partition_ladder():
    parts = dyadic_partitions(0.0, 1.0, 4)
    assert len(parts) == 4
    for m, p in enumerate(parts, start=1):
        assert p.times[0] == 0.0 and p.times[-1] == 1.0
        assert p.n_intervals == 2 ** m
        assert np.isclose(p.mesh, 2.0 ** -m)


def test_partition_refine_halves_mesh():
    p = dyadic_partitions(0.0, 1.0, 1)[0]
    q = p.refine()
    assert np.isclose(q.mesh, p.mesh / 2)
    assert set(p.times) <= set(q.times)


def test_partition_rejects_unsorted():
    from divlab import Partition
    with pytest.raises(ValueError):
        Partition(times=(0.0, 0.5, 0.25))


# ---------------------------------------------------------------------------
# ellipticity


def test_ellipticity_identity_passes(grid1, cf_id):
    rep = validate_ellipticity(cf_id, grid1)
    assert rep.passed


def test_ellipticity_detects_indefinite_matrix():
    # [[1, 2], [2, 1]] has eigenvalue -1: the probe (1,-1)/sqrt(2) exposes it
    a = np.array([[1.0, 2.0], [2.0, 1.0]])

    def a_fn(t, pts):
        return np.broadcast_to(a, (pts.shape[0], 2, 2))

    def b_fn(t, pts):
        return np.zeros((pts.shape[0], 2))

    cf = CoefficientField(d=2, a_fn=a_fn, b_fn=b_fn, lam=0.5, Lam=3.0,
                          Lam1=0.0, name="indefinite")
    g = SpaceTimeGrid(box=((-1.0, 1.0), (-1.0, 1.0)), shape=(9, 9), nt=2,
                      horizon=1.0)
    rep = validate_ellipticity(cf, g)
    assert not rep.passed


def test_ellipticity_flags_understated_upper_bound():
    cf = CoefficientField.diagonal([3.0])
    cf.Lam = 1.0  # claim a bound the field violates
    g = SpaceTimeGrid(box=((-1.0, 1.0),), shape=(17,), nt=2, horizon=1.0)
    rep = validate_ellipticity(cf, g)
    assert not rep.passed
