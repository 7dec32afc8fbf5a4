"""Problem setup: coefficient fields, space-time grids, weights, norms.

The operator under study is in divergence form,

    L_t u = (1/2) sum_ij d_i(a_ij(t,x) d_j u) + sum_i b_i(t,x) d_i u,

with a symmetric and uniformly elliptic (lam |xi|^2 <= xi' a xi <= Lam |xi|^2)
and b bounded componentwise by Lam1.  Coefficients only need to be measurable,
so presets include discontinuous fields alongside smooth ones.

Spatial norms are weighted by rho(x) = (1 + |x|^2)^(-alpha); the mixed norm

    ||f||_{p,q,rho} = ( int_0^T ( int |f rho|^p dx )^(q/p) dt )^(1/q)

is evaluated by trapezoid quadrature on a grid, with p or q = inf meaning the
grid max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .reports import BoundReport

Array = np.ndarray


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class Weight:
    """Polynomial weight rho(x) = (1 + |x|^2)^(-alpha)."""

    alpha: float

    def rho(self, pts: Array) -> Array:
        pts = np.asarray(pts, dtype=float)
        r2 = np.sum(pts * pts, axis=-1)
        return (1.0 + r2) ** (-self.alpha)

    def rho2(self, pts: Array) -> Array:
        r = self.rho(pts)
        return r * r

    def integrable(self, d: int) -> bool:
        # rho^2 in L^1 iff 4*alpha > d; rho in L^2 is the same condition
        return 4.0 * self.alpha > d

    def rho2_radial_mass(self, d: int, r_lo: float = 0.0,
                         r_hi: float = np.inf) -> float:
        """int_{r_lo<|x|<r_hi} rho^2 dx up to the angular constant."""
        val, _ = integrate.quad(
            lambda r: r ** (d - 1) * (1.0 + r * r) ** (-2.0 * self.alpha),
            r_lo, r_hi, limit=200)
        return val


def default_norm_box(w: Weight, d: int, tail: float = 1e-6) -> float:
    """Half-width R so the rho^2 mass outside [-R, R]^d is below tail.

    Used to size quadrature domains for full-space weighted norms.  Requires
    an integrable weight.
    """
    if not w.integrable(d):
        raise ValueError(f"weight alpha={w.alpha} not square-integrable in d={d}")
    total = w.rho2_radial_mass(d)
    r = 1.0
    while w.rho2_radial_mass(d, r_lo=r) > tail * total:
        r *= 1.5
        if r > 1e9:
            raise RuntimeError("norm box search did not converge")
    return r


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform tensor grid on [0, horizon] x box.

    box is (d, 2); shape gives nodes per axis (so spacing h = width/(n-1));
    nt is the number of time steps.
    """

    box: tuple
    shape: tuple
    nt: int
    horizon: float

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ValueError("box must be (d, 2)")
        if np.any(box[:, 1] <= box[:, 0]):
            raise ValueError("box upper edge must exceed lower edge")
        if len(self.shape) != box.shape[0]:
            raise ValueError("shape/box dimension mismatch")
        if any(n < 3 for n in self.shape):
            raise ValueError("need at least 3 nodes per axis")
        if self.nt < 1 or self.horizon <= 0:
            raise ValueError("need nt >= 1 and horizon > 0")
        object.__setattr__(self, "box", tuple(map(tuple, box)))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))

    # -- derived quantities, cached lazily ---------------------------------

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> Array:
        box = np.asarray(self.box)
        return (box[:, 1] - box[:, 0]) / (np.asarray(self.shape) - 1)

    @property
    def tau(self) -> float:
        return self.horizon / self.nt

    @property
    def times(self) -> Array:
        return np.linspace(0.0, self.horizon, self.nt + 1)

    @property
    def axes(self) -> list[Array]:
        box = np.asarray(self.box)
        return [np.linspace(box[i, 0], box[i, 1], self.shape[i])
                for i in range(self.d)]

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def positions(self) -> Array:
        """All node coordinates, shape (n_nodes, d), C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def quad_weights(self) -> Array:
        """Trapezoid quadrature weights per node, shape (n_nodes,)."""
        per_axis = []
        for i, n in enumerate(self.shape):
            wi = np.full(n, self.h[i])
            wi[0] *= 0.5
            wi[-1] *= 0.5
            per_axis.append(wi)
        w = per_axis[0]
        for wi in per_axis[1:]:
            w = np.multiply.outer(w, wi)
        return w.ravel()

    def flat_index(self, multi) -> int:
        return int(np.ravel_multi_index(multi, self.shape))

    def snap(self, x) -> int:
        """Flat index of the nearest grid node to x."""
        x = np.asarray(x, dtype=float).reshape(self.d)
        box = np.asarray(self.box)
        idx = np.rint((x - box[:, 0]) / self.h).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return self.flat_index(tuple(idx))

    def time_index(self, t: float) -> int:
        k = int(round(t / self.tau))
        if not (0 <= k <= self.nt):
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        return k

    def contains(self, pts: Array) -> Array:
        pts = np.asarray(pts, dtype=float)
        box = np.asarray(self.box)
        return np.all((pts >= box[:, 0]) & (pts <= box[:, 1]), axis=-1)

    def interpolate(self, values: Array, pts: Array) -> Array:
        """Multilinear interpolation of node values at points.

        values: (..., n_nodes); pts: (m, d).  Returns (..., m).  Points are
        clipped to the box.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        box = np.asarray(self.box)
        h = self.h
        shape = np.asarray(self.shape)
        rel = (np.clip(pts, box[:, 0], box[:, 1]) - box[:, 0]) / h
        i0 = np.minimum(rel.astype(int), shape - 2)
        frac = rel - i0
        vals = np.asarray(values)
        out = np.zeros(vals.shape[:-1] + (pts.shape[0],))
        for corner in range(1 << self.d):
            bits = [(corner >> ax) & 1 for ax in range(self.d)]
            idx = i0 + np.asarray(bits)
            wgt = np.ones(pts.shape[0])
            for ax in range(self.d):
                wgt = wgt * (frac[:, ax] if bits[ax] else 1.0 - frac[:, ax])
            flat = np.ravel_multi_index(tuple(idx.T), self.shape)
            out += vals[..., flat] * wgt
        return out


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class Partition:
    """Finite partition of a time interval, endpoints included."""

    times: tuple

    def __post_init__(self):
        ts = np.asarray(self.times, dtype=float)
        if ts.size < 2:
            raise ValueError("partition needs at least two points")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("partition times must be strictly increasing")
        object.__setattr__(self, "times", tuple(ts.tolist()))

    @property
    def mesh(self) -> float:
        ts = np.asarray(self.times)
        return float(np.max(np.diff(ts)))

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    def refine(self) -> "Partition":
        ts = np.asarray(self.times)
        mids = 0.5 * (ts[:-1] + ts[1:])
        return Partition(tuple(np.sort(np.concatenate([ts, mids]))))


def dyadic_partitions(s: float, t: float, max_level: int) -> list[Partition]:
    """Partitions of [s, t] with 2^m uniform intervals, m = 1..max_level."""
    if t <= s:
        raise ValueError("need t > s")
    out = []
    for m in range(1, max_level + 1):
        out.append(Partition(tuple(np.linspace(s, t, 2 ** m + 1))))
    return out


# ---------------------------------------------------------------------------
# coefficient fields


@dataclass(eq=False)
class CoefficientField:
    """Diffusion matrix a(t,x) and drift b(t,x) with their stated bounds.

    a_fn(t, pts) -> (..., d, d), b_fn(t, pts) -> (..., d) for pts (..., d).
    The bounds lam, Lam, Lam1 are claims checked by validate_ellipticity,
    not enforced pointwise on every call.
    """

    d: int
    a_fn: Callable[[float, Array], Array]
    b_fn: Callable[[float, Array], Array]
    lam: float
    Lam: float
    Lam1: float
    name: str = "custom"
    time_dependent: bool = False

    def a_at(self, t: float, pts: Array) -> Array:
        pts = np.asarray(pts, dtype=float)
        out = np.asarray(self.a_fn(t, pts), dtype=float)
        want = pts.shape[:-1] + (self.d, self.d)
        return np.broadcast_to(out, want).copy()

    def b_at(self, t: float, pts: Array) -> Array:
        pts = np.asarray(pts, dtype=float)
        out = np.asarray(self.b_fn(t, pts), dtype=float)
        want = pts.shape[:-1] + (self.d,)
        return np.broadcast_to(out, want).copy()

    def a_inv_at(self, t: float, pts: Array) -> Array:
        return np.linalg.inv(self.a_at(t, pts))

    def sigma_at(self, t: float, pts: Array) -> Array:
        """Symmetric square root of a."""
        a = self.a_at(t, pts)
        vals, vecs = np.linalg.eigh(a)
        vals = np.clip(vals, 0.0, None)
        return np.einsum("...ik,...k,...jk->...ij", vecs, np.sqrt(vals), vecs)

    def sigma_inv_at(self, t: float, pts: Array) -> Array:
        a = self.a_at(t, pts)
        vals, vecs = np.linalg.eigh(a)
        vals = np.clip(vals, 1e-300, None)
        return np.einsum("...ik,...k,...jk->...ij", vecs, 1.0 / np.sqrt(vals), vecs)

    # -- presets ------------------------------------------------------------

    @classmethod
    def identity(cls, d: int = 1, b0: Sequence[float] | float = 0.0):
        b0v = _as_drift(b0, d)
        return cls(
            d=d,
            a_fn=lambda t, pts: _const_mat(np.eye(d), pts),
            b_fn=lambda t, pts: _const_vec(b0v, pts),
            lam=1.0, Lam=1.0, Lam1=float(np.max(np.abs(b0v), initial=0.0)),
            name="identity")

    @classmethod
    def diagonal(cls, diag: Sequence[float], b0: Sequence[float] | float = 0.0):
        dv = np.asarray(diag, dtype=float)
        d = dv.size
        b0v = _as_drift(b0, d)
        return cls(
            d=d,
            a_fn=lambda t, pts: _const_mat(np.diag(dv), pts),
            b_fn=lambda t, pts: _const_vec(b0v, pts),
            lam=float(dv.min()), Lam=float(dv.max()),
            Lam1=float(np.max(np.abs(b0v), initial=0.0)),
            name="diagonal")

    @classmethod
    def scalar_sine(cls, d: int = 1, base: float = 1.0, amp: float = 0.4,
                    freq: float = 1.0, b0: Sequence[float] | float = 0.0):
        """Smooth scalar field a(x) = (base + amp sin(freq sum x_i)) I."""
        if not 0 <= amp < base:
            raise ValueError("need 0 <= amp < base for ellipticity")
        b0v = _as_drift(b0, d)

        def a_fn(t, pts):
            s = base + amp * np.sin(freq * np.sum(pts, axis=-1))
            return s[..., None, None] * np.eye(d)

        return cls(d=d, a_fn=a_fn, b_fn=lambda t, pts: _const_vec(b0v, pts),
                   lam=base - amp, Lam=base + amp,
                   Lam1=float(np.max(np.abs(b0v), initial=0.0)),
                   name="scalar-sine")

    @classmethod
    def checkerboard(cls, d: int = 1, low: float = 0.5, high: float = 2.0,
                     tile: float = 1.0, b0: Sequence[float] | float = 0.0):
        """Piecewise-constant scalar field, discontinuous across tile faces.

        Merely measurable coefficients are admissible for the theory; this
        preset exercises that regime.
        """
        if not 0 < low <= high:
            raise ValueError("need 0 < low <= high")
        b0v = _as_drift(b0, d)

        def a_fn(t, pts):
            parity = np.sum(np.floor(pts / tile).astype(int), axis=-1) % 2
            val = np.where(parity == 0, low, high)
            return val[..., None, None] * np.eye(d)

        return cls(d=d, a_fn=a_fn, b_fn=lambda t, pts: _const_vec(b0v, pts),
                   lam=low, Lam=high,
                   Lam1=float(np.max(np.abs(b0v), initial=0.0)),
                   name="checkerboard")

    @classmethod
    def drift_sine(cls, d: int = 1, b_amp: float = 0.5, freq: float = 1.0):
        """Identity diffusion with spatially varying bounded drift."""

        def b_fn(t, pts):
            return b_amp * np.cos(freq * pts)

        return cls(d=d, a_fn=lambda t, pts: _const_mat(np.eye(d), pts),
                   b_fn=b_fn, lam=1.0, Lam=1.0, Lam1=abs(b_amp),
                   name="drift-sine")


def _const_mat(mat: Array, pts: Array) -> Array:
    return np.broadcast_to(mat, np.asarray(pts).shape[:-1] + mat.shape)


def _const_vec(vec: Array, pts: Array) -> Array:
    return np.broadcast_to(vec, np.asarray(pts).shape[:-1] + vec.shape)


def _as_drift(b0, d: int) -> Array:
    arr = np.asarray(b0, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ValueError("drift must be scalar or length-d")
    return arr


# ---------------------------------------------------------------------------
# validation


def validate_ellipticity(cf: CoefficientField, grid: SpaceTimeGrid,
                         n_space: int = 256, n_time: int = 3,
                         n_probe: int = 16, seed: int = 0) -> BoundReport:
    """Probe the claimed bounds lam, Lam, Lam1 and symmetry of a.

    Samples nodes and times, evaluates Rayleigh quotients along axis,
    diagonal and random unit directions.  Non-finite coefficient values
    raise; bound violations are reported, not raised.
    """
    if cf.d != grid.d:
        raise ValueError("field/grid dimension mismatch")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(901,)))
    pos = grid.positions()
    if pos.shape[0] > n_space:
        sel = rng.choice(pos.shape[0], size=n_space, replace=False)
        pos = pos[sel]
    probes = [np.eye(cf.d)[i] for i in range(cf.d)]
    if cf.d > 1:
        probes.append(np.ones(cf.d) / math.sqrt(cf.d))
        v = np.ones(cf.d)
        v[0] = -1.0
        probes.append(v / np.linalg.norm(v))
    extra = rng.normal(size=(n_probe, cf.d))
    probes.extend(extra / np.linalg.norm(extra, axis=1)[:, None])
    probes = np.asarray(probes)

    t_list = np.linspace(0.0, grid.horizon, n_time)
    ray_min, ray_max, asym, b_max = np.inf, -np.inf, 0.0, 0.0
    for t in t_list:
        a = cf.a_at(t, pos)
        b = cf.b_at(t, pos)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("coefficient field returned non-finite values")
        asym = max(asym, float(np.max(np.abs(a - np.swapaxes(a, -1, -2)))))
        quad = np.einsum("pi,nij,pj->np", probes, a, probes)
        ray_min = min(ray_min, float(quad.min()))
        ray_max = max(ray_max, float(quad.max()))
        b_max = max(b_max, float(np.max(np.abs(b), initial=0.0)))

    slack = 1e-10 * max(1.0, cf.Lam)
    violations = {}
    if ray_min < cf.lam - slack:
        violations["rayleigh_min"] = ray_min
    if ray_max > cf.Lam + slack:
        violations["rayleigh_max"] = ray_max
    if asym > slack:
        violations["asymmetry"] = asym
    if b_max > cf.Lam1 + slack:
        violations["drift_bound"] = b_max
    return BoundReport(
        name=f"ellipticity[{cf.name}]",
        passed=not violations,
        statistic=ray_min,
        target=cf.lam,
        tolerance=slack,
        details={"rayleigh_min": ray_min, "rayleigh_max": ray_max,
                 "asymmetry": asym, "drift_max": b_max,
                 "violations": violations})


# ---------------------------------------------------------------------------
# norms


def weighted_norm(f: Array, w: Weight, p: float, q: float,
                  grid: SpaceTimeGrid, t_lo: float = 0.0,
                  t_hi: float | None = None) -> float:
    """Mixed weighted norm of a gridded scalar field.

    f has shape (nt+1, n_nodes) or (n_nodes,) (static in time).  p is the
    spatial exponent, q the temporal one; either may be inf.
    """
    if p < 1 or q < 1:
        raise ValueError("exponents must be >= 1")
    t_hi = grid.horizon if t_hi is None else t_hi
    f = np.asarray(f, dtype=float)
    static = f.ndim == 1
    rho = w.rho(grid.positions())
    qw = grid.quad_weights()
    times = grid.times
    mask = (times >= t_lo - 1e-12) & (times <= t_hi + 1e-12)
    tsel = np.where(mask)[0]
    if tsel.size < 1:
        raise ValueError("empty time window")

    def space_norm(vals: Array) -> float:
        g = np.abs(vals * rho)
        if math.isinf(p):
            return float(g.max())
        return float(np.sum(qw * g ** p) ** (1.0 / p))

    if static:
        s_vals = np.full(tsel.size, space_norm(f))
    else:
        s_vals = np.array([space_norm(f[k]) for k in tsel])

    if math.isinf(q):
        return float(s_vals.max())
    tw = times[tsel]
    if tw.size == 1:
        return float(s_vals[0])
    return float(np.trapezoid(s_vals ** q, tw) ** (1.0 / q))
