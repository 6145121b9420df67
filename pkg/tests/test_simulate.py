import math

import numpy as np
import pytest

from decouple.field_solver import solve
from decouple.grid import GridSpec
from decouple.registry import registry_get
from decouple.simulate import (
    decoupling_residual,
    measured_lipschitz,
    simulate_forward,
    z_bound_check,
)


@pytest.fixture(scope="module")
def heat_traj():
    p = registry_get("heat")
    return solve(p, 1, GridSpec([(-math.pi, math.pi)], [128], "periodic"), 1e-2)


@pytest.fixture(scope="module")
def linear_traj():
    p = registry_get("linear")
    return solve(p, 2, GridSpec([(-2.0, 2.0)], [21]), 0.05)


@pytest.fixture(scope="module")
def skorokhod_traj():
    p = registry_get("skorokhod")
    return solve(p, 1, GridSpec([(-8, 8), (-4, 4)], [81, 26]), 2e-2, save_every=1)


@pytest.fixture(scope="module")
def coupled_traj():
    p = registry_get("coupled_scalar")
    return solve(p, 1, GridSpec([(-math.pi, math.pi)], [100], "periodic"), 2e-2)


def test_linear_paths_follow_field(linear_traj):
    b = simulate_forward(linear_traj, [0.3], 500, seed=1, record=True)
    a = linear_traj.problem.params["a"]
    assert b.X.shape == (500, len(linear_traj.snapshots), 1)
    np.testing.assert_allclose(b.Y[0], a * b.X, atol=1e-12)
    np.testing.assert_allclose(b.Y[1], a, atol=1e-12)
    np.testing.assert_allclose(b.Z[0][..., 0, 0], a * 0.5, atol=1e-12)
    for R in b.residual:
        assert np.max(np.abs(R)) < 1e-11


def test_heat_terminal_expectation(heat_traj):
    b = simulate_forward(heat_traj, [0.0], 100_000, seed=3)
    rep = decoupling_residual(b, heat_traj)
    Y_T = np.sin(b.X_T[:, 0])
    assert abs(Y_T.mean()) < 4 * Y_T.std() / math.sqrt(b.paths)
    for lv in rep.levels:
        assert abs(lv.mean) <= 3 * lv.se + 1e-3
        assert lv.max_abs_tstat < 4


def test_reproducible_and_block_split(heat_traj):
    a = simulate_forward(heat_traj, [0.5], 3000, seed=7, block_size=1024)
    b = simulate_forward(heat_traj, [0.5], 3000, seed=7, block_size=1024)
    c = simulate_forward(heat_traj, [0.5], 3000, seed=8, block_size=1024)
    for u, v in zip(a.residual, b.residual):
        np.testing.assert_array_equal(u, v)
    np.testing.assert_array_equal(a.X_T, b.X_T)
    assert not np.array_equal(a.X_T, c.X_T)
    ra, rb = decoupling_residual(a, heat_traj), decoupling_residual(b, heat_traj)
    assert ra.to_dict() == rb.to_dict()


def test_skorokhod_y1_bounded(skorokhod_traj):
    b = simulate_forward(skorokhod_traj, [0.0, 0.0], 2000, seed=0)
    assert b.y1_max <= 1.0 + 5e-2
    rep = decoupling_residual(b, skorokhod_traj)
    assert all(abs(lv.mean) <= 5e-2 for lv in rep.levels)
    assert rep.regime_note == ""


@pytest.mark.parametrize("name", ["linear", "skorokhod", "coupled"])
def test_z_bound(name, request):
    traj = request.getfixturevalue(f"{name}_traj")
    b = simulate_forward(traj, [0.1] * traj.problem.n, 1000, seed=2)
    zb = z_bound_check(b, traj)
    assert zb["holds"], zb
    assert zb["L_hat"] == measured_lipschitz(traj)


def test_projected_residual_bias_is_first_order():
    # with phi^(1) != 0 the one-step residual projected on dW carries an O(dt) bias
    p = registry_get("coupled_scalar")
    g = GridSpec([(-math.pi, math.pi)], [100], "periodic")
    bias = []
    for dt in (2e-2, 1e-2):
        b = simulate_forward(solve(p, 1, g, dt), [0.4], 20_000, seed=5)
        bias.append([float(np.mean(b.increments[i][0])) for i in range(2)])
    for i in range(2):
        assert 0.35 <= bias[1][i] / bias[0][i] <= 0.65
        assert abs(bias[1][i]) < 5e-3


def test_report_serialisable(heat_traj):
    import json

    b = simulate_forward(heat_traj, [0.0], 100, seed=0)
    json.dumps(decoupling_residual(b, heat_traj).to_dict())
