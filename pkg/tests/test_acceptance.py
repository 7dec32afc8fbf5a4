"""Acceptance battery at the reference scale.

One test per advertised gate; ``pytest -v tests/test_acceptance.py``
prints one pass/fail line per criterion.  The d = 1 context is the
bm-smoke reference (nx 201, nt 400, 2000 paths, seed 7) and the d = 2
context mirrors configs/d2-spot.json.  Budget a couple of minutes.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from divlab import caf_from_data, fundamental_solution, semimartingale_test
from divlab.harness import (
    REGISTRY,
    ROUGH_SEMI_BATTERY,
    ExperimentConfig,
    RunContext,
    run_config,
)

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def _load(name: str) -> ExperimentConfig:
    return ExperimentConfig.from_json(os.path.join(CONFIG_DIR, name))


@pytest.fixture(scope="module")
def ctx():
    return RunContext(_load("bm-smoke.json"))


@pytest.fixture(scope="module")
def ctx2():
    return RunContext(_load("d2-spot.json"))


def _run(context, name):
    res = REGISTRY[name].fn(context)
    lines = []
    for r in res.reports:
        lines.append("%s: stat=%.6g target=%.6g tol=%.6g passed=%s"
                     % (r["name"], r["statistic"], r["target"],
                        r["tolerance"], r["passed"]))
    return res, "\n".join(lines)


def test_c01_kernel_matches_gaussian_within_two_percent(ctx):
    t0 = time.perf_counter()
    kern = fundamental_solution(ctx.cf, ctx.grid, 0, np.asarray(ctx.cfg.x0),
                                substeps=ctx.cfg.kernel_substeps)
    build_seconds = time.perf_counter() - t0
    ctx.art("kernel", lambda: kern)
    res, detail = _run(ctx, "kernel-oracle")
    assert res.passed, detail
    worst = max(r["statistic"] for r in res.reports)
    assert worst < 0.02, detail
    mass, mdetail = _run(ctx, "kernel-mass")
    assert mass.passed, mdetail
    assert all(r["statistic"] <= 1e-3 for r in mass.reports), mdetail
    assert build_seconds < 30.0, f"kernel build took {build_seconds:.1f}s"


def test_c02_alpha_closed_forms(ctx):
    res, detail = _run(ctx, "alpha-example")
    assert res.passed, detail


def test_c03_quadratic_fukushima_mean_and_residual(ctx):
    res, detail = _run(ctx, "fukushima-quadratic")
    assert res.passed, detail


def test_c04_quadratic_variation_dichotomy_under_refinement(ctx):
    res, detail = _run(ctx, "zero-qv")
    assert res.passed, detail


def test_c05_covariation_brackets_d1_and_d2(ctx, ctx2):
    res1, d1 = _run(ctx, "covariation")
    assert res1.passed, d1
    res2, d2 = _run(ctx2, "covariation")
    assert res2.passed, d2


def test_c06_star_integral_span_and_null(ctx):
    res, detail = _run(ctx, "star-identity")
    assert res.passed, detail


def test_c07_corner_local_time_matches_revuz_pairing(ctx):
    res, detail = _run(ctx, "tanaka-revuz")
    assert res.passed, detail


def test_c08_laplace_functional_route_agreement(ctx):
    res, detail = _run(ctx, "laplace")
    assert res.passed, detail


def test_c09_energy_verdicts_and_norm_ratio_battery(ctx):
    res, detail = _run(ctx, "energy")
    assert res.passed, detail


def test_c10_semimartingale_dichotomy(ctx):
    res, detail = _run(ctx, "semimartingale")
    assert res.passed, detail


@pytest.mark.xfail(
    strict=True,
    reason="pathwise TV_m <= 2^{m/2} sqrt(QV_m) pins tv_slope <= "
           "(1 + qv_slope)/2, so the (tv > 0.25, qv < -0.5) corner is "
           "unreachable; measured slack 0.01-0.07 across 25 seeds.  The "
           "classifier therefore gates at (0.15, -0.3); this test keeps "
           "the stricter published corner on record.")
def test_c10_rough_battery_meets_strict_slope_corner(ctx):
    partitions = [p for p in ctx.partitions if len(p.times) >= 5][:6]
    for fld in ctx.rough_fields(ROUGH_SEMI_BATTERY, "walk"):
        A = caf_from_data(fld["f0_g"], fld["fbar_g"], ctx.parts,
                          name=fld["name"])
        rep = semimartingale_test(A, partitions)
        tv = rep.details["tv_slope_level"]
        qv = rep.details["qv_slope_level"]
        assert tv > 0.25 and qv < -0.5, (
            f"{fld['name']}: tv_slope={tv:.3f} qv_slope={qv:.3f}")


def test_c11_capacity_slice_and_shrinking_ball_ladder(ctx, ctx2):
    res1, d1 = _run(ctx, "capacity-slice")
    assert res1.passed, d1
    res2, d2 = _run(ctx2, "capacity-ladder")
    assert res2.passed, d2
    stats = [r["statistic"] for r in res2.reports if "ball" in r["name"]]
    assert all(a > b for a, b in zip(stats, stats[1:])), d2


def test_c12_estimate_batteries_stable_under_refinement(ctx):
    for name in ("apriori", "aronson", "moments", "occupation", "sup-moment"):
        res, detail = _run(ctx, name)
        assert res.passed, f"{name} battery failed:\n{detail}"
    res, detail = _run(ctx, "appendix-refinement")
    assert res.passed, detail


def test_c13_reference_battery_is_deterministic_and_fast(tmp_path):
    cfg = _load("bm-smoke.json")
    t0 = time.perf_counter()
    rep_a = run_config(cfg, out_dir=str(tmp_path / "a"))
    rep_b = run_config(cfg, out_dir=str(tmp_path / "b"))
    elapsed = time.perf_counter() - t0
    assert rep_a["passed"], [c["name"] for c in rep_a["checks"]
                             if not c["passed"]]
    files_a = {p.name: p.read_bytes()
               for p in sorted((tmp_path / "a").glob("*.csv"))}
    files_b = {p.name: p.read_bytes()
               for p in sorted((tmp_path / "b").glob("*.csv"))}
    assert files_a.keys() == files_b.keys()
    for name in files_a:
        assert files_a[name] == files_b[name], f"{name} differs between runs"
    digests_a = [c.get("digest") for c in rep_a["checks"]]
    digests_b = [c.get("digest") for c in rep_b["checks"]]
    assert digests_a == digests_b
    assert elapsed < 300.0, f"two battery runs took {elapsed:.0f}s"
