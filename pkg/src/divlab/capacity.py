"""Hitting-probability capacity estimates and exceptional-start accounting.

cap estimates here are Monte Carlo versions of

    cap(B) = P_m( exists t in [s,T): (t, X_t) in B ),
    P_m(G) = int P_{s,x}(G) ds dx,

with the start measure truncated to a box; every reported number is the
integral over that truncation (not a normalized probability) and carries the
truncation volume in its record.  Hitting is tested against the piecewise
linear interpolant of the sampled path, since testing only at grid times
misses thin time slices entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .reports import BoundReport
from .sampling import KernelChain, sample_paths

Array = np.ndarray


@dataclass(frozen=True)
class SpaceTimeSet:
    """A target set in [0,T) x box.

    kinds:
      "empty"                                  never hit
      "time_slice"  {t0} x rect                interpolated position at t0
      "box"         [t_lo,t_hi] x rect         segment-rectangle intersection
      "ball"        [t_lo,t_hi] x ball(c,r)    segment-ball distance
    rect bounds are per-axis (lo, hi) pairs.
    """

    kind: str
    t_lo: float = 0.0
    t_hi: float = 0.0
    lo: tuple = ()
    hi: tuple = ()
    center: tuple = ()
    radius: float = 0.0
    name: str = ""

    @classmethod
    def empty(cls) -> "SpaceTimeSet":
        return cls(kind="empty", name="empty")

    @classmethod
    def time_slice(cls, t0: float, lo, hi, name: str = "") -> "SpaceTimeSet":
        return cls(kind="time_slice", t_lo=float(t0), t_hi=float(t0),
                   lo=tuple(np.atleast_1d(lo).astype(float)),
                   hi=tuple(np.atleast_1d(hi).astype(float)),
                   name=name or f"slice@{t0:g}")

    @classmethod
    def box(cls, t_lo: float, t_hi: float, lo, hi, name: str = "") -> "SpaceTimeSet":
        return cls(kind="box", t_lo=float(t_lo), t_hi=float(t_hi),
                   lo=tuple(np.atleast_1d(lo).astype(float)),
                   hi=tuple(np.atleast_1d(hi).astype(float)),
                   name=name or "box")

    @classmethod
    def ball(cls, center, radius: float, t_lo: float = 0.0,
             t_hi: float = math.inf, name: str = "") -> "SpaceTimeSet":
        return cls(kind="ball", t_lo=float(t_lo), t_hi=float(t_hi),
                   center=tuple(np.atleast_1d(center).astype(float)),
                   radius=float(radius), name=name or f"ball(r={radius:g})")

    def validate(self, grid) -> None:
        if self.kind == "empty":
            return
        box = np.asarray(grid.box)
        if self.kind in ("time_slice", "box"):
            lo, hi = np.asarray(self.lo), np.asarray(self.hi)
            if lo.size != grid.d or hi.size != grid.d or np.any(lo > hi):
                raise ValueError("malformed rectangle")
            if np.any(lo < box[:, 0]) or np.any(hi > box[:, 1]):
                raise ValueError("target set leaves the simulation box")
        elif self.kind == "ball":
            c = np.asarray(self.center)
            if c.size != grid.d:
                raise ValueError("ball center dimension mismatch")
            if np.any(c - self.radius < box[:, 0]) or np.any(c + self.radius > box[:, 1]):
                raise ValueError("target set leaves the simulation box")
        else:
            raise ValueError(f"unknown set kind: {self.kind}")
        if self.t_lo < 0 or self.t_lo >= grid.horizon + 1e-12:
            raise ValueError("time window outside the horizon")
        if self.t_hi < self.t_lo:
            raise ValueError("empty time window")

    # -- hit tests, vectorized over paths ---------------------------------

    def hits(self, times: Array, positions: Array) -> Array:
        """Boolean per path: does the linear interpolant enter the set."""
        n = positions.shape[0]
        if self.kind == "empty":
            return np.zeros(n, dtype=bool)
        if self.kind == "time_slice":
            return self._hits_slice(times, positions)
        if self.kind == "box":
            return self._hits_box(times, positions)
        return self._hits_ball(times, positions)

    def _hits_slice(self, times: Array, positions: Array) -> Array:
        t0 = self.t_lo
        if t0 < times[0] - 1e-12 or t0 > times[-1] + 1e-12:
            return np.zeros(positions.shape[0], dtype=bool)
        k = int(np.clip(np.searchsorted(times, t0, side="right") - 1,
                        0, times.size - 2))
        lam = (t0 - times[k]) / (times[k + 1] - times[k])
        xt = (1 - lam) * positions[:, k] + lam * positions[:, k + 1]
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((xt >= lo) & (xt <= hi), axis=1)

    def _segment_windows(self, times: Array):
        # feasible interpolation-parameter window per step from the time band
        t0, t1 = times[:-1], times[1:]
        dt = t1 - t0
        lam_lo = np.clip((self.t_lo - t0) / dt, 0.0, 1.0)
        lam_hi = np.clip((min(self.t_hi, times[-1] + 1.0) - t0) / dt, 0.0, 1.0)
        return lam_lo, lam_hi

    def _hits_box(self, times: Array, positions: Array) -> Array:
        lam_lo, lam_hi = self._segment_windows(times)
        x0 = positions[:, :-1]          # (N, M, d)
        dx = np.diff(positions, axis=1)
        lo = np.asarray(self.lo)[None, None, :]
        hi = np.asarray(self.hi)[None, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (lo - x0) / dx
            b = (hi - x0) / dx
        lamA = np.minimum(a, b)
        lamB = np.maximum(a, b)
        flat = np.abs(dx) < 1e-300
        inside = (x0 >= lo) & (x0 <= hi)
        lamA = np.where(flat, np.where(inside, -np.inf, np.inf), lamA)
        lamB = np.where(flat, np.where(inside, np.inf, -np.inf), lamB)
        lamA = np.max(lamA, axis=2)
        lamB = np.min(lamB, axis=2)
        lamA = np.maximum(lamA, lam_lo[None, :])
        lamB = np.minimum(lamB, lam_hi[None, :])
        live = lam_lo < lam_hi + 1e-15
        hit = (lamA <= lamB) & live[None, :]
        return hit.any(axis=1)

    def _hits_ball(self, times: Array, positions: Array) -> Array:
        lam_lo, lam_hi = self._segment_windows(times)
        c = np.asarray(self.center)[None, None, :]
        x0 = positions[:, :-1] - c
        dx = np.diff(positions, axis=1)
        dd = np.einsum("nmd,nmd->nm", dx, dx)
        proj = -np.einsum("nmd,nmd->nm", x0, dx) / np.maximum(dd, 1e-300)
        lam = np.clip(proj, lam_lo[None, :], lam_hi[None, :])
        nearest = x0 + lam[..., None] * dx
        dist2 = np.einsum("nmd,nmd->nm", nearest, nearest)
        live = lam_lo < lam_hi + 1e-15
        hit = (dist2 <= self.radius ** 2) & live[None, :]
        return hit.any(axis=1)


@dataclass
class CapacityEstimate:
    """Truncated Lebesgue-start hitting integral for one set."""

    set_name: str
    value: float
    se: float
    hit_fraction: float
    volume: float
    n_starts: int
    n_paths: int
    per_start: list = field(default_factory=list)
    truncation: dict = field(default_factory=dict)

    def positive_at(self, z: float = 3.0) -> bool:
        return self.value > z * self.se


def _start_battery(grid, n_starts: int, seed: int, pad_frac: float,
                   s_hi_frac: float):
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(202,))))
    box = np.asarray(grid.box)
    width = box[:, 1] - box[:, 0]
    lo = box[:, 0] + pad_frac * width
    hi = box[:, 1] - pad_frac * width
    k_hi = max(1, int(round(s_hi_frac * grid.nt)))
    s_idx = rng.integers(0, k_hi, size=n_starts)
    xs = lo + rng.random((n_starts, grid.d)) * (hi - lo)
    volume = float(k_hi * grid.tau * np.prod(hi - lo))
    trunc = {"x_lo": lo.tolist(), "x_hi": hi.tolist(),
             "s_max": float(k_hi * grid.tau)}
    return s_idx, xs, volume, trunc


def estimate_cap_family(chain: KernelChain, sets: Sequence[SpaceTimeSet],
                        n_starts: int = 64, n_paths: int = 64,
                        seed: int = 0, pad_frac: float = 0.1,
                        s_hi_frac: float = 0.75) -> list[CapacityEstimate]:
    """Estimate caps for several sets on shared ensembles.

    Sharing paths across the family makes nested-set monotonicity exact in
    the sample, which is what the radius-ladder checks rely on.
    """
    grid = chain.grid
    for st in sets:
        st.validate(grid)
    s_idx, xs, volume, trunc = _start_battery(
        grid, n_starts, seed, pad_frac, s_hi_frac)
    frames = [np.empty(n_starts) for _ in sets]
    root = np.random.SeedSequence(entropy=seed, spawn_key=(203,))
    for j in range(n_starts):
        sj = int(s_idx[j])
        child = int(root.spawn(1)[0].generate_state(1)[0])
        e = sample_paths(chain, sj, xs[j], n_paths, seed=child)
        for i, st in enumerate(sets):
            frames[i][j] = float(st.hits(e.times, e.positions).mean())
    out = []
    for st, fr in zip(sets, frames):
        p = float(fr.mean())
        se_frac = float(fr.std(ddof=1) / math.sqrt(n_starts)) if n_starts > 1 else 0.0
        out.append(CapacityEstimate(
            set_name=st.name or st.kind, value=volume * p,
            se=volume * se_frac, hit_fraction=p, volume=volume,
            n_starts=n_starts, n_paths=n_paths,
            per_start=fr.tolist(), truncation=trunc))
    return out


def estimate_cap_L(chain: KernelChain, target: SpaceTimeSet,
                   n_starts: int = 64, n_paths: int = 64, seed: int = 0,
                   **kw) -> CapacityEstimate:
    return estimate_cap_family(chain, [target], n_starts=n_starts,
                               n_paths=n_paths, seed=seed, **kw)[0]


def exception_report(flags: Sequence[bool], weights: Sequence[float] | None = None,
                     volume: float = 1.0, name: str = "exceptional-starts",
                     budget: float = 1.0) -> BoundReport:
    """Volume of the failing-start set for a per-start diagnostic battery.

    flags are True where the diagnostic FAILED.  Weights default to uniform;
    pass Lebesgue cell weights for a structured battery.  budget is the
    volume above which the report flags the battery itself as failing.
    """
    fl = np.asarray(flags, dtype=bool)
    if weights is None:
        w = np.full(fl.size, 1.0 / max(fl.size, 1))
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    frac = float(w[fl].sum()) if fl.size else 0.0
    return BoundReport(
        name=name, passed=frac * volume <= budget,
        statistic=frac * volume, target=0.0, tolerance=budget,
        details={"fraction": frac, "n_flagged": int(fl.sum()),
                 "n_total": int(fl.size), "volume": volume})
