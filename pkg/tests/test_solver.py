"""Backward minimax sweeps: stability, monotonicity, anchors, CSV round trip."""

import numpy as np
import pytest

import latticegames as lg
from latticegames.chain import LatticeDomain
from latticegames.games import payoff_norm
from latticegames.solver import (ValueGrid, auto_dt, dt_ceiling, hamiltonian,
                                 hamiltonian_field, minimax_control_indices,
                                 read_slice_csv, solve_backward, truncate_domain,
                                 weighted_norm, write_slice_csv)


def g1_domain(h=0.1, lo=-20, hi=20):
    return LatticeDomain(h=h, lo=(lo,), hi=(hi,))


def terminal_grid(spec, domain):
    vals = np.array([spec.payoff(x) for x in domain.states()])
    return ValueGrid(t=spec.T, domain=domain, values=vals)


def test_dt_ceiling_formula():
    assert dt_ceiling(lg.g1(), 0.1) == pytest.approx(0.1 / 3.0)
    assert dt_ceiling(lg.g2(), 0.1) == pytest.approx(0.1 / 18.0)


def test_auto_dt_tiles_horizon():
    spec = lg.g1()
    dt = auto_dt(spec, 0.05)
    n = spec.T / dt
    assert abs(n - round(n)) < 1e-9
    assert dt <= dt_ceiling(spec, 0.05) * (1 + 1e-9)


def test_truncate_domain_reaches_everything():
    spec = lg.g1()
    dom = truncate_domain(spec, [-1.0, 1.0], 0.1)
    # radius M1*T + pad = 2 around [-1, 1]
    assert dom.lo == (-30,) and dom.hi == (30,)


def test_truncate_domain_budget():
    spec = lg.g2()
    with pytest.raises(lg.ResourceError):
        truncate_domain(spec, [[0.0, 0.0], [0.0, 0.0]], 0.001, max_points=10_000)


def test_weighted_norm_spike():
    dom = LatticeDomain(h=0.5, lo=(-4,), hi=(4,))
    vals = np.zeros(dom.n_points)
    vals[-1] = 5.0  # at x = 2.0
    grid = ValueGrid(t=0.0, domain=dom, values=vals)
    assert weighted_norm(grid) == pytest.approx(2.0)


def test_hamiltonian_anchor_on_distance_slice():
    # on values |x| away from the kink the upper Hamiltonian is -0.5:
    # the minimiser pushes toward the origin at net speed 0.5
    spec = lg.g1()
    dom = g1_domain()
    grid = terminal_grid(spec, dom)
    assert hamiltonian(grid, spec, 1.0, np.array([0.5]), "upper") == pytest.approx(-0.5)
    assert hamiltonian(grid, spec, 1.0, np.array([-0.7]), "upper") == pytest.approx(-0.5)
    # at the kink both neighbours rise, so even the best control pays 0.5
    assert hamiltonian(grid, spec, 1.0, np.array([0.0]), "upper") == pytest.approx(0.5)


def test_hamiltonian_field_matches_point_queries():
    spec = lg.g1()
    dom = g1_domain()
    grid = terminal_grid(spec, dom)
    field = hamiltonian_field(grid.values, spec, 1.0, dom, "upper")
    for x in (-1.0, -0.3, 0.0, 0.4, 1.2):
        idx = dom.index_of_state(np.array([x]))
        assert field[idx] == hamiltonian(grid, spec, 1.0, np.array([x]), "upper")


def test_lower_kind_differs_by_commitment_order():
    # coupled drift u*v: committing first is a disadvantage
    spec = lg.GameSpec(
        name="coupled", d=1, T=1.0,
        drift=lambda t, x, u, v: np.array([u * v]),
        u_grid=(-1.0, 1.0), v_grid=(-1.0, 1.0),
        payoff=lambda x: abs(float(np.atleast_1d(x)[0])),
        R=1.0, M1=1.0, K1=0.0)
    dom = LatticeDomain(h=0.1, lo=(-30,), hi=(30,))
    vals = np.abs(dom.states()[:, 0])
    up = hamiltonian_field(vals, spec, 1.0, dom, "upper")
    lo = hamiltonian_field(vals, spec, 1.0, dom, "lower")
    assert np.all(lo <= up + 1e-14)
    assert np.any(lo < up - 1e-9)


def test_minimax_control_indices_anchor():
    # to the right of the origin the first player chooses u = -1 (index 0)
    spec = lg.g1()
    dom = g1_domain()
    grid = terminal_grid(spec, dom)
    right = dom.index_of_state(np.array([0.8]))
    left = dom.index_of_state(np.array([-0.8]))
    idxs = minimax_control_indices(grid.values, spec, 1.0, dom,
                                   np.array([right, left]))
    assert idxs.tolist() == [0, 2]


def test_solve_preserves_constants():
    spec = lg.GameSpec(name="const", d=1, T=1.0, drift=lg.g1().drift,
                       u_grid=(-1.0, 0.0, 1.0), v_grid=(-0.5, 0.0, 0.5),
                       payoff=lambda x: 3.25, R=1.0, M1=1.5, K1=0.0,
                       vectorized=True)
    dom = g1_domain()
    res = solve_backward(spec, dom, checkpoints=[0.0])
    assert np.all(res.slice_at(0.0).values == 3.25)


def test_solve_monotone_in_terminal_data():
    # comparison principle: a larger payoff gives a larger value slice
    base = lg.g1()
    norm = payoff_norm()
    bigger = lg.GameSpec(name="g1+", d=1, T=1.0, drift=base.drift,
                         u_grid=base.u_grid, v_grid=base.v_grid,
                         payoff=lambda x: norm(x) + 0.3,
                         R=1.3, M1=1.5, K1=0.0, vectorized=True)
    dom = g1_domain()
    a = solve_backward(base, dom, checkpoints=[0.0]).slice_at(0.0)
    b = solve_backward(bigger, dom, checkpoints=[0.0]).slice_at(0.0)
    assert np.all(b.values >= a.values - 1e-12)


def test_solve_range_preserved():
    spec = lg.g1()
    dom = g1_domain()
    res = solve_backward(spec, dom, checkpoints=None)
    g = res.slice_at(spec.T).values
    for grid in res.slices:
        assert grid.values.min() >= g.min() - 1e-12
        assert grid.values.max() <= g.max() + 1e-12


def test_solve_dt_above_ceiling_rejected():
    spec = lg.g1()
    dom = g1_domain()
    with pytest.raises(lg.StepSizeError, match="stability ceiling"):
        solve_backward(spec, dom, dt=0.5)


def test_checkpoints_snap_down():
    spec = lg.g1()
    dom = g1_domain()
    res = solve_backward(spec, dom, dt=0.02, checkpoints=[0.0, 0.55, 1.0])
    # 0.55 is not on the grid T - k*0.02; snapped to 0.54
    assert set(np.round(res.times, 10)) == {0.0, 0.54, 1.0}


def test_slice_at_missing_time_raises():
    spec = lg.g1()
    dom = g1_domain()
    res = solve_backward(spec, dom, checkpoints=[0.0])
    with pytest.raises(lg.TruncationError):
        res.slice_at(0.37)


def test_slice_at_or_below():
    spec = lg.g1()
    dom = g1_domain()
    res = solve_backward(spec, dom, dt=0.025, checkpoints=[0.0, 0.5, 1.0])
    assert res.slice_at_or_below(0.74).t == pytest.approx(0.5)
    assert res.slice_at_or_below(0.5).t == pytest.approx(0.5)
    assert res.slice_at_or_below(0.0).t == pytest.approx(0.0)


def test_rk4_close_to_euler():
    spec = lg.g1()
    dom = g1_domain()
    a = solve_backward(spec, dom, dt=0.002, checkpoints=[0.0]).slice_at(0.0)
    b = solve_backward(spec, dom, dt=0.002, scheme="rk4", checkpoints=[0.0]).slice_at(0.0)
    assert np.max(np.abs(a.values - b.values)) < 5e-3


def test_upper_equals_lower_under_isaacs():
    spec = lg.g1()
    dom = g1_domain()
    up = solve_backward(spec, dom, kind="upper", checkpoints=[0.0]).slice_at(0.0)
    lo = solve_backward(spec, dom, kind="lower", checkpoints=[0.0]).slice_at(0.0)
    assert np.max(np.abs(up.values - lo.values)) <= 1e-12


def test_strict_boundary_raises_when_drift_exits():
    spec = lg.g1()
    dom = LatticeDomain(h=0.5, lo=(-2,), hi=(2,))
    with pytest.raises(lg.TruncationError):
        solve_backward(spec, dom, boundary="strict")


def test_boundary_influence_vanishes_when_pad_doubles():
    # reachability padding keeps the frozen ring outside the reported
    # region's numerical domain of dependence, so doubling the pad must not
    # move any value with max-norm <= 1
    spec = lg.g1()
    a = solve_backward(spec, truncate_domain(spec, [-1.0, 1.0], 0.05, pad=0.5),
                       checkpoints=[0.0]).slice_at(0.0)
    b = solve_backward(spec, truncate_domain(spec, [-1.0, 1.0], 0.05, pad=1.0),
                       checkpoints=[0.0]).slice_at(0.0)
    pts = a.domain.states()
    keep = np.abs(pts[:, 0]) <= 1.0 + 1e-12
    worst = max(abs(a.value_at(x) - b.value_at(x)) for x in pts[keep])
    assert worst <= 1e-12


def test_instability_detector():
    # an anti-dissipative "generator" is emulated by a huge explicit dt on a
    # drift whose declared bound is a lie; the runaway check must fire
    spec = lg.GameSpec(name="lie", d=1, T=1.0,
                       drift=lambda t, x, u, v: np.array([40.0 * np.sign(float(np.atleast_1d(x)[0]) or 1.0)]),
                       u_grid=(0.0,), v_grid=(0.0,),
                       payoff=payoff_norm(),
                       R=1.0, M1=0.1, K1=0.0)
    dom = LatticeDomain(h=0.1, lo=(-40,), hi=(40,))
    with pytest.raises(lg.StepSizeError):
        solve_backward(spec, dom)


def test_csv_roundtrip(tmp_path):
    spec = lg.g1()
    dom = g1_domain(h=0.25, lo=-8, hi=8)
    res = solve_backward(spec, dom, checkpoints=[0.0])
    grid = res.slice_at(0.0)
    path = tmp_path / "slice.csv"
    write_slice_csv(grid, path, meta={"config_sha256": "abc", "seed": 7})
    back, meta = read_slice_csv(path, 0.25)
    assert meta["config_sha256"] == "abc"
    assert meta["seed"] == "7"
    assert back.domain == grid.domain
    assert np.array_equal(back.values, grid.values)  # 17 digits round-trip exactly
    assert back.t == grid.t


def test_csv_determinism(tmp_path):
    spec = lg.g1()
    dom = g1_domain(h=0.25, lo=-8, hi=8)
    res = solve_backward(spec, dom, checkpoints=[0.0])
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_slice_csv(res.slice_at(0.0), p1, meta={"seed": 0})
    write_slice_csv(res.slice_at(0.0), p2, meta={"seed": 0})
    assert p1.read_bytes() == p2.read_bytes()


def test_value_grid_rejects_nonfinite():
    dom = g1_domain(h=0.5, lo=-2, hi=2)
    with pytest.raises(lg.GameSpecError):
        ValueGrid(t=0.0, domain=dom, values=np.array([0.0, 1.0, np.nan, 0.0, 0.0]))
