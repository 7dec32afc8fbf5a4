"""Kernel construction, Cauchy solver, resolvent routes, Gaussian envelopes."""
import math

import numpy as np
import pytest

from divlab import (CoefficientField, DistributionData, SpaceTimeGrid, Weight,
                    check_apriori, check_aronson, check_chapman,
                    fundamental_solution, quadratic_data, resolvent,
                    resolvent_via_kernel, solve_cauchy)


def _gaussian(pos, x0, t, d):
    r2 = np.sum((pos - x0) ** 2, axis=1)
    return np.exp(-r2 / (2.0 * t)) / (2.0 * math.pi * t) ** (d / 2.0)


# ---------------------------------------------------------------------------
# fundamental solution vs exact heat kernel


def test_kernel_matches_heat_kernel_d1():
    cf = CoefficientField.identity(1)
    g = SpaceTimeGrid(box=((-4.0, 4.0),), shape=(201,), nt=200, horizon=0.5)
    k = fundamental_solution(cf, g, 0, [0.0])
    pos = g.positions()
    x0 = np.asarray(k.x)
    worst = 0.0
    for j in range(1, g.nt + 1):
        t = g.times[j]
        if t < 0.05:
            continue  # peak width below grid resolution before this
        ex = _gaussian(pos, x0, t, 1)
        worst = max(worst, float(np.max(np.abs(k.p[j] - ex)) / ex.max()))
    assert worst < 0.02, f"rel-Linf {worst:.4f}"


def test_kernel_matches_heat_kernel_d2_under_refinement():
    # early slices need h << sqrt(t), so the comparison window starts at 0.2;
    # the pair of resolutions pins the convergence, the fine one the accuracy
    errs = []
    for nx, nt in ((61, 80), (121, 320)):
        g = SpaceTimeGrid(box=((-4.0, 4.0), (-4.0, 4.0)), shape=(nx, nx),
                          nt=nt, horizon=0.5)
        k = fundamental_solution(CoefficientField.identity(2), g, 0, [0.0, 0.0])
        pos = g.positions()
        x0 = np.asarray(k.x)
        worst = 0.0
        for j in range(1, g.nt + 1):
            t = g.times[j]
            if t < 0.2:
                continue
            ex = _gaussian(pos, x0, t, 2)
            worst = max(worst, float(np.max(np.abs(k.p[j] - ex)) / ex.max()))
        errs.append(worst)
    assert errs[1] < 0.02, f"fine-grid rel-Linf {errs[1]:.4f}"
    assert errs[1] < 0.5 * errs[0], f"no convergence: {errs}"


def test_kernel_source_is_snapped_node():
    cf = CoefficientField.identity(1)
    g = SpaceTimeGrid(box=((-1.0, 1.0),), shape=(11,), nt=4, horizon=0.1)
    k = fundamental_solution(cf, g, 0, [0.23])
    assert np.isclose(np.asarray(k.x)[0], 0.2)
    src = g.snap(np.array([0.2]))
    assert np.isclose(k.p[0][src], 1.0 / 0.2)  # unit mass on one cell


def test_kernel_mass_conserved(kernel1, grid1):
    qw = grid1.quad_weights()
    for j in range(kernel1.K + 1):
        assert abs(float(kernel1.p[j] @ qw) - 1.0) < 1e-3


def test_kernel_mean_and_variance(kernel1, grid1):
    # identity coefficients from the origin: mean 0, variance t per axis
    pos = grid1.positions()[:, 0]
    qw = grid1.quad_weights()
    j = grid1.nt
    t = grid1.times[j]
    mean = float((kernel1.p[j] * pos) @ qw)
    var = float((kernel1.p[j] * pos ** 2) @ qw) - mean ** 2
    assert abs(mean) < 1e-10
    assert abs(var - t) / t < 0.01


def test_chapman_consistency(kernel1, grid1):
    r = grid1.nt // 2
    rep = check_chapman(kernel1, r, [r + grid1.nt // 4, grid1.nt])
    assert rep.passed, rep.details


# ---------------------------------------------------------------------------
# Cauchy solver


def test_quadratic_data_is_stationary(grid1, cf_id):
    # terminal x^2 with the compensating source keeps the solution frozen
    u = solve_cauchy(quadratic_data(grid1, cf_id), cf_id, grid1)
    pos = grid1.positions()[:, 0]
    interior = np.abs(pos) <= 2.0
    for j in (0, grid1.nt // 2):
        dev = np.max(np.abs(u.u[j, interior] - pos[interior] ** 2))
        assert dev < 1e-2, f"slice {j}: {dev}"  # no-flux wall bleed only


def test_solver_terminal_condition_exact(grid1, cf_id):
    data = DistributionData.from_callables(
        grid1, terminal=lambda p: np.cos(p[:, 0]))
    u = solve_cauchy(data, cf_id, grid1)
    assert np.allclose(u.u[-1], np.cos(grid1.positions()[:, 0]))


def test_caloric_solution_matches_kernel_smoothing(grid1, cf_id):
    # solving backward from a bump must reproduce kernel smoothing of it:
    # u(0, x0) = E[f(X_T)]. With matched stepping the two routes share the
    # same discrete operator, so agreement is near machine precision.
    k = fundamental_solution(cf_id, grid1, 0, [0.0], substeps=1)
    data = DistributionData.from_callables(
        grid1, terminal=lambda p: np.exp(-p[:, 0] ** 2))
    u = solve_cauchy(data, cf_id, grid1)
    qw = grid1.quad_weights()
    f = np.exp(-grid1.positions()[:, 0] ** 2)
    via_kernel = float((k.p[grid1.nt] * f) @ qw)
    src = grid1.snap(np.asarray(k.x))
    assert abs(u.u[0, src] - via_kernel) < 1e-6


# ---------------------------------------------------------------------------
# resolvent routes


def test_resolvent_routes_agree(grid1, cf_id, kernel1):
    one = lambda t, p: np.ones(p.shape[0])
    for alpha in (0.5, 1.0, 2.0):
        closed = (1.0 - math.exp(-alpha * grid1.horizon)) / alpha
        via_k = resolvent_via_kernel(kernel1, one, alpha)
        u = resolvent(one, alpha, cf_id, grid1)
        src = grid1.snap(np.asarray(kernel1.x))
        via_g = float(u.u[0, src])
        assert abs(via_k - closed) / closed < 0.02
        assert abs(via_g - closed) / closed < 0.02
        assert abs(via_k - via_g) / closed < 0.02


# ---------------------------------------------------------------------------
# a priori bound


def test_apriori_bound_holds(grid1, cf_id, w1):
    data = DistributionData.from_callables(
        grid1, terminal=lambda p: np.exp(-p[:, 0] ** 2),
        f0=lambda t, p: np.sin(p[:, 0]) * (1.0 + t))
    rep = check_apriori(solve_cauchy(data, cf_id, grid1), w1)
    assert rep.passed, rep.details


def test_apriori_rejects_trivial_data(grid1, cf_id, w1):
    u = solve_cauchy(DistributionData(terminal=np.zeros(grid1.n_nodes)),
                     cf_id, grid1)
    with pytest.raises(ValueError, match="trivial data"):
        check_apriori(u, w1)


# ---------------------------------------------------------------------------
# Gaussian envelope


def test_aronson_envelope_constants(kernel1, w1):
    rep = check_aronson(kernel1, w1)
    assert rep.passed, rep.details
    # identity coefficients: the sharp constant is (2 pi)^{-1/2}
    assert abs(rep.details["C1"] - 0.39894) / 0.39894 < 0.10
    assert rep.details["worst_norm_ratio"] <= 1.0


def test_aronson_rejects_bad_exponent_pair(kernel1, w1):
    with pytest.raises(ValueError, match="exponent pairs"):
        check_aronson(kernel1, w1, pairs=((1.0, 3.0),))


def test_aronson_rejects_empty_window(kernel1, w1):
    with pytest.raises(ValueError, match="no kernel slices"):
        check_aronson(kernel1, w1, t_skip=10.0)
