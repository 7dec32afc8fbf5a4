"""Path sampling: law agreement, determinism, and moment gates."""
import numpy as np

from divlab import (moment_check, occupation_check, sample_paths,
                    weighted_norm, weighted_start_battery)


def test_chain_marginals_equal_kernel_slices(chain1, kernel1, grid1):
    # both routes run the same factorized solves, so this is exact
    src = int(grid1.snap(np.asarray(kernel1.x)))
    marg = chain1.marginals(src, grid1.nt)
    qw = grid1.quad_weights()
    for j in range(grid1.nt + 1):
        assert np.max(np.abs(marg[j] - kernel1.p[j] * qw)) < 1e-12


def test_one_step_variance_matches_tau(ens1, grid1):
    p = ens1.positions
    step = p[:, 1, 0] - p[:, 0, 0]
    assert abs(step.mean()) < 3.0 * np.sqrt(grid1.tau / ens1.n_paths)
    # cell jitter widens the single-step law a little beyond tau
    assert abs(step.var() - grid1.tau) / grid1.tau < 0.3


def test_paths_stay_inside_box(ens1, grid1):
    p = ens1.positions
    (lo, hi), = grid1.box
    assert p.min() >= lo and p.max() <= hi


def test_same_seed_reproduces_paths(chain1):
    a = sample_paths(chain1, 0, [0.0], 50, seed=21)
    b = sample_paths(chain1, 0, [0.0], 50, seed=21)
    assert np.array_equal(a.positions, b.positions)
    c = sample_paths(chain1, 0, [0.0], 50, seed=22)
    assert not np.array_equal(c.positions, a.positions)


def test_shorter_run_is_prefix_of_longer(chain1):
    a = sample_paths(chain1, 0, [0.0], 40, seed=9, n_steps=50)
    b = sample_paths(chain1, 0, [0.0], 40, seed=9, n_steps=100)
    assert np.array_equal(a.positions, b.positions[:, :51])


def test_moment_gate_passes(chain1):
    rep = moment_check(chain1, 0, [np.array([0.0]), np.array([1.0])],
                       n_paths=300, seed=5)
    assert rep.passed, rep.details


def test_occupation_gate_passes(chain1, grid1, w1):
    # bump centered on the start keeps the comparison two-sided
    f = lambda t, p: np.exp(-np.sum(p ** 2, axis=-1))
    f_grid = f(0.0, grid1.positions())
    f_norm = weighted_norm(
        np.broadcast_to(f_grid, (grid1.nt + 1, f_grid.size)), w1, 2, 8, grid1)
    rep = occupation_check(chain1, 0, [np.array([0.0])], f, f_norm, w1,
                           n_paths=200, seed=13)
    assert rep.passed, rep.details


def test_weighted_start_battery_geometry(grid1, w1):
    bat = weighted_start_battery(grid1, w1, stride=8, pad=1.0)
    (lo, hi), = grid1.box
    assert len(bat) > 0
    for x, wt in bat:
        assert wt > 0
        assert lo + 1.0 <= x[0] <= hi - 1.0  # pad keeps starts off the walls
    # heavier weight toward the origin
    ws = {float(x[0]): wt for x, wt in bat}
    xs = sorted(ws)
    mid = min(xs, key=abs)
    assert ws[mid] == max(ws.values())
