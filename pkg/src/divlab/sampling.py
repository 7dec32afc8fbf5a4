"""Path sampling for the grid diffusion.

The chain's one-step transition is the same substepped implicit kernel used
for the fundamental solution, so chain marginals and PDE kernel slices agree
by construction.  Sampling is exact inverse-CDF on transition rows; paths
carry a per-path lattice offset (frozen along the path) so ensemble
statistics see off-node positions without perturbing increments.

Conditional step means, covariances, chain marginals and Bayes-reversed step
means are all computed from the same factorized operator, which keeps the
forward and reversed descriptions exactly dual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import CoefficientField, SpaceTimeGrid, Weight
from .pde import implicit_factor
from .reports import BoundReport

Array = np.ndarray


class KernelChain:
    """Markov chain on grid nodes induced by the implicit transition kernel.

    Dense mode precomputes the full transition matrix and row CDFs; above
    dense_limit nodes, rows are solved on demand (transposed triangular
    solves) and cached per node.
    """

    def __init__(self, cf: CoefficientField, grid: SpaceTimeGrid,
                 substeps: int = 4, dense_limit: int = 2000):
        if cf.time_dependent:
            raise NotImplementedError(
                "chain sampling assumes time-independent coefficients")
        self.cf = cf
        self.grid = grid
        self.substeps = substeps
        self.pos = grid.positions()
        self.qw = grid.quad_weights()
        self.lu = implicit_factor(cf, grid, grid.tau / substeps, 0.0)
        self.dense = grid.n_nodes <= dense_limit
        self._row_cache: dict[int, tuple[Array, Array]] = {}
        n = grid.n_nodes
        if self.dense:
            S = self.lu.solve(np.eye(n))
            S = np.linalg.matrix_power(S, substeps) if substeps > 1 else S
            # mass-transition law is the qw-conjugate of the function-side
            # matrix; the weights differ from uniform only at the boundary
            P = np.clip(S * (self.qw[None, :] / self.qw[:, None]), 0.0, None)
            P /= P.sum(axis=1, keepdims=True)
            self.cdf = np.cumsum(P, axis=1)
        else:
            self.cdf = None
        self._moments_cache: tuple[Array, Array] | None = None

    # -- operator applications ---------------------------------------------

    def apply_T(self, v: Array) -> Array:
        """Function-side one-step operator: (Tv)(z) = E[v(X_{k+1}) | X_k=z]."""
        out = np.asarray(v, dtype=float)
        for _ in range(self.substeps):
            out = self.lu.solve(out)
        return out

    def apply_Tt(self, v: Array) -> Array:
        """Density-side one-step operator (exact transpose of apply_T)."""
        out = np.asarray(v, dtype=float)
        for _ in range(self.substeps):
            out = self.lu.solve(out, trans="T")
        return out

    # -- conditional moments -----------------------------------------------

    def step_moments(self) -> tuple[Array, Array]:
        """Conditional mean displacement (n,d) and covariance (n,d,d)."""
        if self._moments_cache is not None:
            return self._moments_cache
        d = self.grid.d
        pos = self.pos
        mean_abs = np.stack([self.apply_T(pos[:, i]) for i in range(d)], axis=1)
        mean = mean_abs - pos
        cov = np.empty((self.grid.n_nodes, d, d))
        for i in range(d):
            for j in range(i, d):
                m2 = self.apply_T(pos[:, i] * pos[:, j])
                c = m2 - mean_abs[:, i] * mean_abs[:, j]
                cov[:, i, j] = c
                cov[:, j, i] = c
        self._moments_cache = (mean, cov)
        return self._moments_cache

    # -- marginals and reversal --------------------------------------------

    def marginals(self, src_node: int, n_steps: int) -> Array:
        """Node occupation probabilities, shape (n_steps+1, n_nodes).

        Propagates the density exactly as the stored fundamental solution
        does (same factorization, same clip, same mass renormalization), so
        marginals/qw reproduces the kernel slices to rounding error.
        """
        dens = np.zeros(self.grid.n_nodes)
        dens[src_node] = 1.0 / self.qw[src_node]
        out = np.zeros((n_steps + 1, self.grid.n_nodes))
        out[0] = dens * self.qw
        for k in range(n_steps):
            v = self.apply_Tt(dens)
            dens = np.clip(v, 0.0, None) / float(self.qw @ v)
            out[k + 1] = dens * self.qw
        return out

    def reversed_disp(self, marg_k: Array, floor: float = 1e-300) -> Array:
        """E[X_k | X_{k+1} = z] - z for every node z, given the marginal at k.

        Bayes reversal of one chain step; nodes with negligible forward mass
        get zero displacement (they are never visited).  marg_k holds node
        masses; the density-side operator wants densities, and the outer
        weight cancels in the ratio.
        """
        dens_k = np.asarray(marg_k, dtype=float) / self.qw
        den = self.apply_Tt(dens_k)
        num = np.stack(
            [self.apply_Tt(dens_k * self.pos[:, i]) for i in range(self.grid.d)],
            axis=1)
        ok = den > max(floor, den.max() * 1e-14)
        disp = np.zeros_like(num)
        disp[ok] = num[ok] / den[ok, None] - self.pos[ok]
        return disp

    # -- sampling -----------------------------------------------------------

    def row(self, z: int) -> tuple[Array, Array]:
        """Support columns and CDF of the mass-transition row from node z."""
        if self.dense:
            return None, self.cdf[z]
        hit = self._row_cache.get(z)
        if hit is not None:
            return hit
        e = np.zeros(self.grid.n_nodes)
        e[z] = 1.0
        w = self.qw * self.apply_Tt(e)      # one-step mass from a unit at z
        w = np.clip(w, 0.0, None)
        cols = np.where(w > w.max() * 1e-14)[0]
        pr = w[cols]
        cdf = np.cumsum(pr / pr.sum())
        self._row_cache[z] = (cols, cdf)
        return cols, cdf

    def sample_step(self, nodes: Array, u: Array) -> Array:
        if self.dense:
            rows = self.cdf[nodes]
            return (rows < u[:, None]).sum(axis=1).astype(nodes.dtype)
        nxt = np.empty_like(nodes)
        for z in np.unique(nodes):
            sel = nodes == z
            cols, cdf = self.row(int(z))
            nxt[sel] = cols[np.searchsorted(cdf, u[sel])]
        return nxt


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class PathEnsemble:
    """Sampled paths started at (s_idx, x): nodes, positions and provenance."""

    grid: SpaceTimeGrid
    cf: CoefficientField
    chain: KernelChain
    s_idx: int
    x: Array
    seed: int
    times: Array                  # (M+1,)
    nodes: Array                  # (N, M+1) int32
    positions: Array              # (N, M+1, d)
    offsets: Array                # (N, d)
    boundary_touches: int = 0

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.positions.shape[1] - 1

    def increments(self) -> Array:
        return np.diff(self.positions, axis=1)

    def reverse(self) -> "ReversedEnsemble":
        return ReversedEnsemble(
            base=self,
            times=self.times,
            nodes=np.flip(self.nodes, axis=1),
            positions=np.flip(self.positions, axis=1))


@dataclass
class ReversedEnsemble:
    """Time reversal of an ensemble on the same uniform clock.

    positions[:, j] is the base path at forward step M-j; reversing again
    returns the base object, so the involution is exact.
    """

    base: PathEnsemble
    times: Array
    nodes: Array
    positions: Array

    def reverse(self) -> PathEnsemble:
        return self.base

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.positions.shape[1] - 1


def sample_paths(chain: KernelChain, s_idx: int, x, n_paths: int, seed: int,
                 n_steps: int | None = None, jitter: bool = True) -> PathEnsemble:
    """Draw an ensemble from the chain started at the node nearest x.

    Per-path random streams are spawned from (seed, path index), so the
    ensemble is reproducible and prefix-stable in both path count and length.
    X_0 is reported as x exactly; later positions are node + per-path offset.
    """
    grid = chain.grid
    x = np.asarray(x, dtype=float).reshape(grid.d)
    if not grid.contains(x):
        raise ValueError("start point outside the box")
    if not (0 <= s_idx < grid.nt):
        raise ValueError("start index must precede the horizon")
    M = grid.nt - s_idx if n_steps is None else int(n_steps)
    if not (1 <= M <= grid.nt - s_idx):
        raise ValueError("step count exceeds the horizon")

    src = grid.snap(x)
    uniforms = np.empty((n_paths, M))
    offsets = np.zeros((n_paths, grid.d))
    for p in range(n_paths):
        g = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=seed, spawn_key=(101, p))))
        if jitter:
            offsets[p] = (g.random(grid.d) - 0.5) * grid.h
        else:
            g.random(grid.d)
        uniforms[p] = g.random(M)

    nodes = np.empty((n_paths, M + 1), dtype=np.int32)
    nodes[:, 0] = src
    for k in range(M):
        nodes[:, k + 1] = chain.sample_step(nodes[:, k], uniforms[:, k])

    box = np.asarray(grid.box)
    positions = chain.pos[nodes] + offsets[:, None, :]
    positions = np.clip(positions, box[:, 0], box[:, 1])
    positions[:, 0] = x

    edge = _edge_mask(grid)
    boundary_touches = int(np.any(edge[nodes], axis=1).sum())

    return PathEnsemble(
        grid=grid, cf=chain.cf, chain=chain, s_idx=s_idx, x=x, seed=seed,
        times=grid.times[s_idx:s_idx + M + 1], nodes=nodes,
        positions=positions, offsets=offsets,
        boundary_touches=boundary_touches)


def _edge_mask(grid: SpaceTimeGrid) -> Array:
    multi = np.unravel_index(np.arange(grid.n_nodes), grid.shape)
    shape = np.asarray(grid.shape)
    mask = np.zeros(grid.n_nodes, dtype=bool)
    for i in range(grid.d):
        mask |= (multi[i] == 0) | (multi[i] == shape[i] - 1)
    return mask


# ---------------------------------------------------------------------------
# sanity checks built on ensembles


def moment_check(chain: KernelChain, s_idx: int, starts: Sequence,
                 p_list: Sequence[float] = (1.0, 2.0, 4.0),
                 n_paths: int = 400, seed: int = 0) -> BoundReport:
    """Sup-moment ratios of the sampled process over a battery of starts.

        E sup_t |X_t - x|^p <= C(p)   and   E sup_t |X_t|^p <= C(p)(1+|x|)^p

    The report carries the worst ratios; stability across refinements and
    batteries is judged by the caller.
    """
    rows = {}
    worst = 0.0
    for j, x0 in enumerate(starts):
        e = sample_paths(chain, s_idx, x0, n_paths, seed + 7 * j)
        dev = np.linalg.norm(e.positions - np.asarray(x0, dtype=float),
                             axis=-1).max(axis=1)
        mag = np.linalg.norm(e.positions, axis=-1).max(axis=1)
        base = (1.0 + np.linalg.norm(np.asarray(x0, dtype=float)))
        row = {}
        for p in p_list:
            r_dev = float(np.mean(dev ** p))
            r_mag = float(np.mean(mag ** p)) / base ** p
            row[f"p{p:g}"] = {"centered": r_dev, "weighted": r_mag}
            worst = max(worst, r_dev, r_mag)
        rows[str(np.asarray(x0).tolist())] = row
    return BoundReport(
        name="sup-moments",
        passed=bool(np.isfinite(worst)),
        statistic=worst, target=0.0, tolerance=np.inf,
        details={"per_start": rows})


def occupation_check(chain: KernelChain, s_idx: int, starts: Sequence,
                     f: Callable[[float, Array], Array], f_norm: float,
                     w: Weight, n_paths: int = 400,
                     seed: int = 0) -> BoundReport:
    """Occupation ratio  E_{s,x} int_s^T f(t,X_t)^2 dt  vs  rho^-2(x) ||f||^2.

    f_norm must be the mixed (p,q,rho) norm of f computed on a domain wide
    enough to capture the weight; exponents are the caller's business, the
    admissible range requires d/(2p) + 1/q < 1/2.
    """
    tau = chain.grid.tau
    rows = {}
    worst = 0.0
    for j, x0 in enumerate(starts):
        e = sample_paths(chain, s_idx, x0, n_paths, seed + 11 * j)
        vals = np.stack([np.asarray(f(t, e.positions[:, k]), dtype=float)
                         for k, t in enumerate(e.times)], axis=1)
        occ = float(np.mean(np.trapezoid(vals ** 2, e.times, axis=1)))
        rho_x = float(w.rho(np.atleast_2d(np.asarray(x0, dtype=float)))[0])
        ratio = occ * rho_x ** 2 / f_norm ** 2
        rows[str(np.asarray(x0).tolist())] = {"lhs": occ, "ratio": ratio}
        worst = max(worst, ratio)
    return BoundReport(
        name="occupation-density",
        passed=bool(np.isfinite(worst)),
        statistic=worst, target=0.0, tolerance=np.inf,
        details={"per_start": rows, "f_norm": f_norm})


def weighted_start_battery(grid: SpaceTimeGrid, w: Weight, power: int = 2,
                           stride: int = 8, pad: float = 1.0) -> list[tuple]:
    """Quadrature battery (x_j, weight_j) for start measures rho^power dx.

    Nodes come from a coarse subgrid kept pad away from the box edge, so all
    sampled paths stay well inside; weights are trapezoid times the density.
    The truncated outside mass is the caller's reporting burden.
    """
    pos = grid.positions()
    qw = grid.quad_weights()
    box = np.asarray(grid.box)
    inner = np.all((pos >= box[:, 0] + pad) & (pos <= box[:, 1] - pad), axis=-1)
    multi = np.unravel_index(np.arange(grid.n_nodes), grid.shape)
    on_sub = np.ones(grid.n_nodes, dtype=bool)
    for i in range(grid.d):
        on_sub &= (multi[i] % stride) == 0
    sel = np.where(inner & on_sub)[0]
    dens = w.rho(pos[sel]) ** power
    wts = dens * qw[sel] * stride ** grid.d
    return [(pos[z], float(wt)) for z, wt in zip(sel, wts)]
