"""Grid discretization of the divergence-form operator and its kernel.

Space is discretized with a conservative flux stencil (arithmetic face
averages), time with implicit Euler.  The forward density equation is stepped
with the exact matrix transpose of the backward-equation operator, so the
discrete function/density duality holds to machine precision.

The fundamental solution p(s,x,theta,y) is produced by evolving a grid delta
under the adjoint scheme, optionally with internal substeps per grid step to
sharpen the time accuracy near the source.  Log-density gradients (scores)
are stored alongside, clamped where the density underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .model import CoefficientField, SpaceTimeGrid, Weight, weighted_norm
from .reports import BoundReport

Array = np.ndarray


# ---------------------------------------------------------------------------
# operator assembly


@lru_cache(maxsize=32)
def grad_ops(grid: SpaceTimeGrid) -> tuple:
    """Centered-difference gradient matrices, one per axis.

    Values outside the box are treated as zero, matching the Dirichlet-type
    truncation used everywhere else.
    """
    n = grid.n_nodes
    shape = np.asarray(grid.shape)
    multi = np.unravel_index(np.arange(n), grid.shape)
    strides = np.array([int(np.prod(grid.shape[i + 1:])) for i in range(grid.d)])
    ops = []
    for i in range(grid.d):
        rows, cols, vals = [], [], []
        c = 1.0 / (2.0 * grid.h[i])
        up = np.where(multi[i] < shape[i] - 1)[0]
        rows.append(up); cols.append(up + strides[i]); vals.append(np.full(up.size, c))
        dn = np.where(multi[i] > 0)[0]
        rows.append(dn); cols.append(dn - strides[i]); vals.append(np.full(dn.size, -c))
        G = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
        ops.append(G)
    return tuple(ops)


def build_generator(cf: CoefficientField, grid: SpaceTimeGrid, t: float):
    """Sparse matrix of L_t acting on grid functions.

    Diagonal diffusion entries use conservative face fluxes (zero row sums,
    so the adjoint conserves mass exactly away from drift boundary rows);
    cross-derivative and drift terms are centered.
    """
    if cf.d != grid.d:
        raise ValueError("field/grid dimension mismatch")
    pos = grid.positions()
    n = grid.n_nodes
    shape = np.asarray(grid.shape)
    h = grid.h
    a = cf.a_at(t, pos)
    b = cf.b_at(t, pos)
    multi = np.unravel_index(np.arange(n), grid.shape)
    strides = np.array([int(np.prod(grid.shape[i + 1:])) for i in range(grid.d)])

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(np.asarray(r)); cols.append(np.asarray(c))
        vals.append(np.asarray(v, dtype=float))

    for i in range(grid.d):
        idx = np.where(multi[i] < shape[i] - 1)[0]
        up = idx + strides[i]
        aface = 0.5 * (a[idx, i, i] + a[up, i, i])
        c = aface / (2.0 * h[i] * h[i])
        add(idx, up, c); add(idx, idx, -c)
        add(up, idx, c); add(up, up, -c)
        if np.any(b[:, i]):
            add(idx, up, b[idx, i] / (2.0 * h[i]))
            dn = np.where(multi[i] > 0)[0]
            add(dn, dn - strides[i], -b[dn, i] / (2.0 * h[i]))

    for i in range(grid.d):
        for j in range(grid.d):
            if i == j or not np.any(a[:, i, j]):
                continue
            ok = ((multi[i] > 0) & (multi[i] < shape[i] - 1)
                  & (multi[j] > 0) & (multi[j] < shape[j] - 1))
            idx = np.where(ok)[0]
            cpl = 0.5 / (4.0 * h[i] * h[j])
            aip = a[idx + strides[i], i, j] * cpl
            aim = a[idx - strides[i], i, j] * cpl
            add(idx, idx + strides[i] + strides[j], aip)
            add(idx, idx + strides[i] - strides[j], -aip)
            add(idx, idx - strides[i] + strides[j], -aim)
            add(idx, idx - strides[i] - strides[j], aim)

    L = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    return L


def implicit_factor(cf: CoefficientField, grid: SpaceTimeGrid,
                    tau_sub: float, t: float, shift: float = 0.0):
    """LU factorization of (I - tau_sub (L_t - shift)), cached on cf.

    Time-independent fields share one factorization across all steps.
    """
    cache = cf.__dict__.setdefault("_lu_cache", {})
    t_key = round(t, 12) if cf.time_dependent else None
    key = (grid, round(tau_sub, 15), t_key, round(shift, 12))
    if key not in cache:
        L = build_generator(cf, grid, t)
        A = (sparse.identity(grid.n_nodes, format="csc")
             - tau_sub * (L - shift * sparse.identity(grid.n_nodes, format="csc")))
        cache[key] = splu(A.tocsc())
    return cache[key]


# ---------------------------------------------------------------------------
# data and solutions


@dataclass
class DistributionData:
    """Right-hand side f0 + div(fbar) plus terminal condition.

    f0: (nt+1, n_nodes) or None; fbar: (nt+1, d, n_nodes) or None;
    terminal: (n_nodes,).  The divergence of fbar is only ever used weakly.
    """

    terminal: Array
    f0: Array | None = None
    fbar: Array | None = None

    @classmethod
    def from_callables(cls, grid: SpaceTimeGrid,
                       terminal: Callable[[Array], Array] | None = None,
                       f0: Callable[[float, Array], Array] | None = None,
                       fbar: Callable[[float, Array], Array] | None = None):
        pos = grid.positions()
        n = grid.n_nodes
        term = np.zeros(n) if terminal is None else np.asarray(terminal(pos), dtype=float)
        f0g = None
        if f0 is not None:
            f0g = np.stack([np.asarray(f0(t, pos), dtype=float) for t in grid.times])
        fbg = None
        if fbar is not None:
            slices = []
            for t in grid.times:
                v = np.asarray(fbar(t, pos), dtype=float)   # (n, d)
                slices.append(v.T)
            fbg = np.stack(slices)                          # (nt+1, d, n)
        return cls(terminal=term, f0=f0g, fbar=fbg)


@dataclass
class WeakSolution:
    """Grid solution of the backward equation, with gradient and its data."""

    grid: SpaceTimeGrid
    cf: CoefficientField
    u: Array                      # (nt+1, n_nodes)
    grad: Array                   # (nt+1, d, n_nodes)
    data: DistributionData | None = None
    meta: dict = field(default_factory=dict)

    def value(self, t_idx: int, pts: Array) -> Array:
        return self.grid.interpolate(self.u[t_idx], pts)

    def grad_at(self, t_idx: int, pts: Array) -> Array:
        out = self.grid.interpolate(self.grad[t_idx], pts)  # (d, m)
        return np.moveaxis(out, 0, -1)

    def value_at_point(self, t: float, x) -> float:
        k = self.grid.time_index(t)
        return float(self.value(k, np.atleast_2d(x))[0])


def _gradient_field(grid: SpaceTimeGrid, u: Array) -> Array:
    G = grad_ops(grid)
    return np.stack([np.stack([Gi @ uk for Gi in G]) for uk in u])


def solve_cauchy(data: DistributionData, cf: CoefficientField,
                 grid: SpaceTimeGrid, shift: float = 0.0,
                 meta: dict | None = None) -> WeakSolution:
    """Backward implicit-Euler solve of d_t u + L u - shift*u = -(f0 + div fbar).

    The divergence enters weakly: div fbar is realized as -sum_i G_i^T fbar_i,
    the exact discrete adjoint of the stored gradient, so rough fbar fields
    are admissible.
    """
    n = grid.n_nodes
    G = grad_ops(grid)
    u = np.empty((grid.nt + 1, n))
    u[grid.nt] = np.asarray(data.terminal, dtype=float)
    tau = grid.tau
    for k in range(grid.nt - 1, -1, -1):
        t = grid.times[k]
        rhs = u[k + 1].copy()
        if data.f0 is not None:
            rhs += tau * data.f0[k]
        if data.fbar is not None:
            for i in range(grid.d):
                rhs -= tau * (G[i].T @ data.fbar[k, i])
        lu = implicit_factor(cf, grid, tau, t, shift=shift)
        u[k] = lu.solve(rhs)
    return WeakSolution(grid=grid, cf=cf, u=u, grad=_gradient_field(grid, u),
                        data=data, meta=meta or {})


def resolvent(xi: Array | Callable, alpha: float, cf: CoefficientField,
              grid: SpaceTimeGrid) -> WeakSolution:
    """u(s,x) = E_{s,x} int_s^T exp(-alpha (theta - s)) xi(theta, X_theta) dtheta."""
    pos = grid.positions()
    if callable(xi):
        f0 = np.stack([np.asarray(xi(t, pos), dtype=float) for t in grid.times])
    else:
        xi = np.asarray(xi, dtype=float)
        f0 = np.broadcast_to(xi, (grid.nt + 1, grid.n_nodes)).copy()
    data = DistributionData(terminal=np.zeros(grid.n_nodes), f0=f0)
    return solve_cauchy(data, cf, grid, shift=alpha, meta={"alpha": alpha})


# ---------------------------------------------------------------------------
# fundamental solution


@dataclass
class TransitionKernel:
    """Fundamental solution from one space-time source, on grid slices.

    p[k] is the density at time index s_idx + k (k = 0 is the grid delta).
    score[k] = grad_y log p, clamped to zero where the density underflows;
    masses[k] records total mass before the per-step renormalization.
    """

    grid: SpaceTimeGrid
    cf: CoefficientField
    s_idx: int
    x: Array
    substeps: int
    p: Array                      # (K+1, n_nodes)
    score: Array                  # (K+1, d, n_nodes)
    grad: Array                   # (K+1, d, n_nodes)
    masses: Array                 # (K+1,)
    clamped: Array                # (K+1,) fraction of nodes clamped
    tiny: float

    @property
    def K(self) -> int:
        return self.p.shape[0] - 1

    def local(self, t_idx: int) -> int:
        k = t_idx - self.s_idx
        if not (0 <= k <= self.K):
            raise ValueError(f"time index {t_idx} outside kernel range")
        return k

    def p_at(self, t_idx: int, pts: Array) -> Array:
        return self.grid.interpolate(self.p[self.local(t_idx)], pts)

    def score_at(self, t_idx: int, pts: Array) -> Array:
        out = self.grid.interpolate(self.score[self.local(t_idx)], pts)
        return np.moveaxis(out, 0, -1)

    def mean_var(self, t_idx: int) -> tuple[Array, Array]:
        """Quadrature mean and covariance of the slice at t_idx."""
        k = self.local(t_idx)
        qw = self.grid.quad_weights()
        pos = self.grid.positions()
        w = qw * self.p[k]
        w = w / w.sum()
        m = pos.T @ w
        dx = pos - m
        cov = (dx * w[:, None]).T @ dx
        return m, cov


def fundamental_solution(cf: CoefficientField, grid: SpaceTimeGrid,
                         s_idx: int, x, substeps: int = 4,
                         tiny: float = 1e-12, with_score: bool = True,
                         n_steps: int | None = None) -> TransitionKernel:
    """Evolve a grid delta at (s_idx, x) under the adjoint implicit scheme.

    n_steps truncates the evolution window; short-window kernels are all the
    energy ladder needs and cost a fraction of a full-horizon run.
    """
    if not (0 <= s_idx < grid.nt):
        raise ValueError("source time index must lie before the horizon")
    x = np.asarray(x, dtype=float).reshape(grid.d)
    if not grid.contains(x):
        raise ValueError("source point outside the box")
    n = grid.n_nodes
    qw = grid.quad_weights()
    src = grid.snap(x)
    # the delta carries the snapped node, so that is the kernel's source
    x = grid.positions()[src].copy()
    K = grid.nt - s_idx
    if n_steps is not None:
        K = min(K, int(n_steps))
    p = np.zeros((K + 1, n))
    p[0, src] = 1.0 / qw[src]
    masses = np.empty(K + 1)
    masses[0] = 1.0
    tau_sub = grid.tau / substeps
    for k in range(K):
        t = grid.times[s_idx + k]
        lu = implicit_factor(cf, grid, tau_sub, t)
        v = p[k]
        for _ in range(substeps):
            v = lu.solve(v, trans="T")
        m = float(qw @ v)
        masses[k + 1] = m
        p[k + 1] = np.clip(v, 0.0, None) / m

    if with_score:
        score, grad, clamped = _score_fields(grid, p, tiny)
        # delta slice has no usable score
        score[0] = 0.0
    else:
        score = np.zeros((K + 1, grid.d, n))
        grad = np.zeros_like(score)
        clamped = np.zeros(K + 1)
    return TransitionKernel(grid=grid, cf=cf, s_idx=s_idx, x=x,
                            substeps=substeps, p=p, score=score, grad=grad,
                            masses=masses, clamped=clamped, tiny=tiny)


def _score_fields(grid: SpaceTimeGrid, p: Array, tiny: float):
    """Centered differences of log p, zeroed on underflow nodes."""
    G = grad_ops(grid)
    K1 = p.shape[0]
    score = np.zeros((K1, grid.d, grid.n_nodes))
    grad = np.zeros_like(score)
    clamped = np.zeros(K1)
    for k in range(K1):
        pk = p[k]
        peak = pk.max()
        ok = pk > tiny * peak
        logp = np.log(np.where(ok, pk, peak))
        for i in range(grid.d):
            gi = G[i] @ logp
            score[k, i] = np.where(ok, gi, 0.0)
            grad[k, i] = G[i] @ pk
        # score only trusted where both neighbors were valid; cheap proxy:
        clamped[k] = 1.0 - ok.mean()
    return score, grad, clamped


def resolvent_via_kernel(kernel: TransitionKernel, xi: Array | Callable,
                         alpha: float) -> float:
    """Quadrature route to R_alpha xi at the kernel source."""
    grid = kernel.grid
    pos = grid.positions()
    qw = grid.quad_weights()
    ts = grid.times[kernel.s_idx:]
    s = ts[0]
    vals = np.empty(ts.size)
    for j, t in enumerate(ts):
        xit = xi(t, pos) if callable(xi) else xi
        vals[j] = math.exp(-alpha * (t - s)) * float(qw @ (kernel.p[j] * xit))
    return float(np.trapezoid(vals, ts))


# ---------------------------------------------------------------------------
# checks


def check_apriori(u: WeakSolution, w: Weight) -> BoundReport:
    """Energy ratio for one solve: lhs/rhs of the weighted a priori bound.

        sup_t ||u_t||_{2,rho}^2 + || |grad u| ||_{2,2,rho}^2
            <= C ( ||phi||_{2,rho}^2 + ||f0||_{2,2,rho}^2 + ||fbar||_{2,2,rho}^2 )

    The report carries the ratio; callers judge stability across a battery.
    """
    grid = u.grid
    rho = w.rho(grid.positions())
    qw = grid.quad_weights()
    sup_u2 = max(float(np.sum(qw * (uk * rho) ** 2)) for uk in u.u)
    gmag = np.sqrt(np.sum(u.grad ** 2, axis=1))          # (nt+1, n)
    grad_22 = weighted_norm(gmag, w, 2, 2, grid) ** 2
    lhs = sup_u2 + grad_22

    data = u.data
    if data is None:
        raise ValueError("solution carries no data record")
    rhs = float(np.sum(qw * (data.terminal * rho) ** 2))
    if data.f0 is not None:
        rhs += weighted_norm(data.f0, w, 2, 2, grid) ** 2
    if data.fbar is not None:
        fmag = np.sqrt(np.sum(data.fbar ** 2, axis=1))
        rhs += weighted_norm(fmag, w, 2, 2, grid) ** 2
    if rhs <= 0:
        raise ValueError("trivial data: a priori ratio undefined")
    ratio = lhs / rhs
    return BoundReport(
        name="apriori-energy",
        passed=bool(np.isfinite(ratio)),
        statistic=ratio, target=0.0, tolerance=np.inf,
        details={"lhs": lhs, "rhs": rhs, "sup_u2": sup_u2,
                 "grad_norm2": grad_22})


def _envelope(c1: float, c2: float, d: int, dt: Array, r2: Array) -> Array:
    return c1 * dt ** (-d / 2.0) * np.exp(-r2 / (c2 * dt))


def check_aronson(kernel: TransitionKernel, w: Weight,
                  pairs: Sequence[tuple[float, float]] = ((2.0, 2.0),),
                  c2_factor: float = 4.0,
                  skip_slices: int = 1,
                  t_skip: float = 0.05) -> BoundReport:
    """Gaussian upper envelope and conjugate-norm estimates for the kernel.

    Fits the smallest C1 with C2 = c2_factor * Lam such that
    p <= C1 (theta-s)^(-d/2) exp(-|y-x|^2 / (C2 (theta-s))) on all stored
    slices with theta - s >= t_skip, then checks the weighted conjugate norms
    ||p||_{p',q',rho_x^{-1}} against the envelope's.  Early slices are
    excluded: an implicit step has exponential-in-r tails, so the Gaussian
    envelope only holds once diffusion dominates the stencil, the same
    window in which the kernel itself is trusted.  Exponent pairs must
    satisfy d/(2p) + 1/q < 1 (p, q > 1); violations raise ValueError.
    """
    d = kernel.grid.d
    bad = [(p, q) for p, q in pairs
           if not (p > 1 and q > 1 and d / (2.0 * p) + 1.0 / q < 1.0)]
    if bad:
        raise ValueError(f"exponent pairs violate d/(2p) + 1/q < 1: {bad}")

    grid = kernel.grid
    pos = grid.positions()
    qw = grid.quad_weights()
    r2 = np.sum((pos - kernel.x) ** 2, axis=-1)
    ts = grid.times[kernel.s_idx:]
    s = ts[0]
    skip_slices = max(skip_slices,
                      int(np.searchsorted(ts, s + t_skip, side="left")))
    if skip_slices > kernel.K:
        raise ValueError(
            f"t_skip={t_skip} leaves no kernel slices past the delta")
    c2 = c2_factor * kernel.cf.Lam

    c1 = 0.0
    c1g = 0.0
    for k in range(skip_slices, kernel.K + 1):
        dt = ts[k] - s
        pk = kernel.p[k]
        # Fit only where the slice is numerically resolved.  Implicit-step
        # far tails decay exponentially in r rather than in r^2; their
        # sub-tiny values times the Gaussian boost are pure float noise.
        mask = pk >= kernel.tiny * float(pk.max())
        boost = np.exp(np.minimum(r2[mask] / (c2 * dt), 700.0))
        c1 = max(c1, float(np.max(pk[mask] * dt ** (d / 2.0) * boost)))
        gmag = np.sqrt(np.sum(kernel.grad[k] ** 2, axis=0))
        c1g = max(c1g, float(np.max(gmag[mask] * dt ** ((d + 1) / 2.0) * boost)))

    # conjugate-norm comparison on the window past the delta slice
    rho_inv = (1.0 + r2) ** (+w.alpha)
    t_lo = ts[skip_slices]
    norm_rows = {}
    worst = 0.0
    for p, q in pairs:
        pc = p / (p - 1.0) if np.isfinite(p) else 1.0
        qc = q / (q - 1.0) if np.isfinite(q) else 1.0

        def mixed(fld, pp, qq):
            svals = []
            for k in range(skip_slices, kernel.K + 1):
                g = np.abs(fld(k)) * rho_inv
                if np.isinf(pp):
                    svals.append(g.max())
                else:
                    svals.append(np.sum(qw * g ** pp) ** (1.0 / pp))
            svals = np.asarray(svals)
            tw = ts[skip_slices:]
            if np.isinf(qq):
                return float(svals.max())
            return float(np.trapezoid(svals ** qq, tw) ** (1.0 / qq))

        np_norm = mixed(lambda k: kernel.p[k], pc, qc)
        ne_norm = mixed(lambda k: _envelope(c1, c2, d, ts[k] - s, r2), pc, qc)
        gp = 2 * p
        gq = 2 * q
        gpc = gp / (gp - 1.0)
        gqc = gq / (gq - 1.0)
        ng_norm = mixed(lambda k: np.sqrt(np.sum(kernel.grad[k] ** 2, axis=0)),
                        gpc, gqc)
        nge_norm = mixed(
            lambda k: _envelope(c1g, c2, d, ts[k] - s, r2) * (ts[k] - s) ** (-0.5),
            gpc, gqc)
        ratio = np_norm / ne_norm if ne_norm > 0 else np.inf
        ratio_g = ng_norm / nge_norm if nge_norm > 0 else np.inf
        worst = max(worst, ratio, ratio_g)
        norm_rows[f"p{p}_q{q}"] = {
            "kernel_norm": np_norm, "envelope_norm": ne_norm, "ratio": ratio,
            "grad_norm": ng_norm, "grad_envelope_norm": nge_norm,
            "grad_ratio": ratio_g}

    passed = bool(np.isfinite(c1) and np.isfinite(c1g) and worst <= 1.0 + 1e-9)
    return BoundReport(
        name="aronson-envelope",
        passed=passed,
        statistic=c1, target=0.0, tolerance=0.0,
        details={"C1": c1, "C1_grad": c1g, "C2": c2,
                 "window_start": float(t_lo), "norms": norm_rows,
                 "worst_norm_ratio": worst})


def check_chapman(kernel: TransitionKernel, r_idx: int,
                  t_indices: Sequence[int] | None = None,
                  mass_cover: float = 1.0 - 1e-10,
                  tol: float = 1e-6) -> BoundReport:
    """Two-step composition vs the direct kernel at later times.

    Composes p(s,x,r,z) with fresh kernels started at (r,z) over the nodes z
    that carry mass_cover of the slice at r, and compares against the stored
    kernel.  Exercises source normalization and the semigroup wiring.
    """
    grid = kernel.grid
    if not (kernel.s_idx < r_idx < grid.nt):
        raise ValueError("mid index must lie strictly inside the kernel range")
    if t_indices is None:
        t_indices = [(r_idx + grid.nt) // 2, grid.nt]
    qw = grid.quad_weights()
    pos = grid.positions()
    slice_r = kernel.p[kernel.local(r_idx)]
    mass = slice_r * qw
    order = np.argsort(mass)[::-1]
    cum = np.cumsum(mass[order])
    n_keep = int(np.searchsorted(cum, mass_cover * cum[-1]) + 1)
    keep = order[:n_keep]

    composite = {t: np.zeros(grid.n_nodes) for t in t_indices}
    for z in keep:
        kz = fundamental_solution(kernel.cf, grid, r_idx, pos[z],
                                  substeps=kernel.substeps, tiny=kernel.tiny,
                                  with_score=False)
        for t in t_indices:
            composite[t] += mass[z] * kz.p[kz.local(t)]

    worst = 0.0
    per_t = {}
    for t in t_indices:
        direct = kernel.p[kernel.local(t)]
        err = float(np.max(np.abs(composite[t] - direct)) / direct.max())
        per_t[int(t)] = err
        worst = max(worst, err)
    return BoundReport(
        name="chapman-kolmogorov",
        passed=worst <= tol + (1.0 - mass_cover) * 10.0,
        statistic=worst, target=0.0, tolerance=tol,
        details={"per_time_rel_linf": per_t, "nodes_used": int(n_keep)})
