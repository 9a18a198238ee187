"""Gap-aiming feedback coupling: aiming rule, adversaries, paired replicas."""

import numpy as np
import pytest

import latticegames as lg


@pytest.fixture(scope="module")
def g1_solution():
    spec = lg.g1()
    dom = lg.truncate_domain(spec, [-1.0, 1.0], 0.05)
    eta = lg.solve_backward(spec, dom, kind="upper")  # dense slices
    return spec, eta


def test_partition_validation():
    with pytest.raises(lg.GameSpecError):
        lg.Partition(times=(0.0,))
    with pytest.raises(lg.GameSpecError):
        lg.Partition(times=(0.0, 0.5, 0.5))
    with pytest.raises(lg.GameSpecError):
        lg.Partition.uniform(0.0, 1.0, 0.0)


def test_partition_uniform():
    p = lg.Partition.uniform(0.0, 1.0, 0.01)
    assert p.n_intervals == 100
    assert p.t0 == 0.0 and p.t_end == 1.0
    assert p.diameter == pytest.approx(0.01)
    # diameter larger than the span still yields one interval
    assert lg.Partition.uniform(0.2, 0.3, 5.0).n_intervals == 1


def test_varpi_is_projected_drift():
    spec = lg.g1()
    # z - xi = +1, so varpi = u + v
    assert lg.varpi(spec, 0.0, [1.0], [0.0], 1.0, 0.5) == pytest.approx(1.5)
    assert lg.varpi(spec, 0.0, [1.0], [0.0], -1.0, 0.5) == pytest.approx(-0.5)
    with pytest.raises(lg.GameSpecError):
        lg.varpi(spec, 0.0, [1.0], [0.0], 1.0, 0.5, branch=3)


def test_varpi_branch_evaluation_point():
    # state-dependent drift distinguishes the two branches
    spec = lg.GameSpec(
        name="aff", d=1, T=1.0,
        drift=lambda t, x, u, v: (u + v) * (1.0 + x),
        u_grid=(-1.0, 1.0), v_grid=(-0.5, 0.5),
        payoff=lg.payoff_norm(), R=1.0, M1=6.0, K1=1.5, vectorized=True)
    b1 = lg.varpi(spec, 0.0, [1.0], [0.0], 1.0, 0.5, branch=1)  # f at z=1
    b2 = lg.varpi(spec, 0.0, [1.0], [0.0], 1.0, 0.5, branch=2)  # f at xi=0
    assert b1 == pytest.approx(3.0)
    assert b2 == pytest.approx(1.5)


def test_select_u_and_v_anchors():
    spec = lg.g1()
    iu, u = lg.select_u(spec, 0.0, [1.0], [0.0])
    assert (iu, u) == (0, -1.0)  # min_u max_v (u + v)
    iv, v = lg.select_v(spec, 0.0, [1.0], [0.0])
    assert (iv, v) == (2, 0.5)   # max_v min_u (u + v)
    # reversed displacement flips both selections
    assert lg.select_u(spec, 0.0, [0.0], [1.0])[0] == 2
    assert lg.select_v(spec, 0.0, [0.0], [1.0])[0] == 0


def test_model_feedback_follows_value_slope(g1_solution):
    spec, eta = g1_solution
    # on the |x| - 0.5(T-t) slope the minimizing player pushes toward zero
    assert lg.model_feedback(eta, spec, 0.0, np.array([1.0]))[0] == 0
    assert lg.model_feedback(eta, spec, 0.0, np.array([-1.0]))[0] == 2


def test_adversary_panel():
    spec = lg.g1()
    panel = lg.standard_adversaries(spec)
    assert tuple(a.name for a in panel) == ("constant", "bang_bang", "random", "worst_case")
    x = np.array([[0.4], [-0.2]])
    y = np.zeros((2, 1))
    vh = np.array([2, 1], dtype=np.int64)
    const, bang, rand, mirror = panel
    assert np.array_equal(const.select(0, 0.0, x, y, None, vh), [2, 2])
    assert np.array_equal(bang.select(0, 0.0, x, y, None, vh), [-1, 0])
    assert np.array_equal(mirror.select(0, 0.0, x, y, None, vh), vh)
    drawn = rand.pre_draw(lg.replica_rng(0, 0), 5)[None, :].repeat(2, axis=0)
    assert drawn.shape == (2, 5)
    assert np.array_equal(rand.select(3, 0.0, x, y, drawn, vh), drawn[:, 3])
    assert np.all((drawn >= 0) & (drawn < 3))


def test_single_replica_log_structure(g1_solution):
    spec, eta = g1_solution
    part = lg.Partition.uniform(0.0, 1.0, 0.02)
    traj = lg.run_extremal_shift(spec, eta, part, [0.0], lg.MirrorAdversary(),
                                 rng=lg.replica_rng(0, 0))
    r = part.n_intervals
    assert traj.times.shape == (r + 1,)
    assert traj.node_x.shape == (r + 1, 1)
    assert traj.node_y.shape == (r + 1, 1)
    assert traj.u_indices.shape == (r,)
    assert traj.v_adv_indices.shape == (r,)
    assert traj.v_hat_indices.shape == (r,)
    assert traj.sq_gap.shape == (r + 1,)
    assert traj.sq_gap[0] == 0.0
    # model path stays on the lattice and jumps stay inside the partition span
    if len(traj.jump_times):
        assert traj.jump_times.min() >= 0.0 and traj.jump_times.max() < 1.0
        k = traj.jump_states / 0.05
        assert np.max(np.abs(k - np.round(k))) < 1e-9
    # outcomes are the terminal payoffs of the two paths
    assert traj.outcome == pytest.approx(abs(traj.dense_x[-1, 0]))
    assert traj.model_outcome == pytest.approx(abs(traj.node_y[-1, 0]))
    # mirror plays the aiming response
    assert np.array_equal(traj.v_adv_indices, traj.v_hat_indices)


def test_trajectory_interpolators(g1_solution):
    spec, eta = g1_solution
    part = lg.Partition.uniform(0.0, 1.0, 0.02)
    traj = lg.run_extremal_shift(spec, eta, part, [0.0], lg.BangBangAdversary(),
                                 rng=lg.replica_rng(1, 0))
    assert np.array_equal(traj.x_at(-1.0), traj.dense_x[0])
    assert np.array_equal(traj.x_at(2.0), traj.dense_x[-1])
    assert np.array_equal(traj.y_at(0.0), traj.node_y[0])
    assert np.array_equal(traj.y_at(2.0), traj.node_y[-1])
    assert traj.interval_of(0.0) == 0
    assert traj.interval_of(1.0) == part.n_intervals - 1


def test_trajectory_csv_roundtrip(tmp_path, g1_solution):
    spec, eta = g1_solution
    part = lg.Partition.uniform(0.0, 1.0, 0.1)
    traj = lg.run_extremal_shift(spec, eta, part, [0.0], lg.ConstantAdversary(),
                                 rng=lg.replica_rng(2, 0))
    out = tmp_path / "traj.csv"
    traj.write_csv(out, meta={"seed": 2})
    lines = out.read_text().splitlines()
    assert lines[0] == "# seed=2"
    assert lines[1] == "tau,x_1,y_1,u_index,v_index"
    assert len(lines) == 2 + len(np.unique(np.concatenate([traj.times, traj.jump_times])))
    first = lines[2].split(",")
    assert float(first[0]) == 0.0
    assert float(first[1]) == 0.0 and float(first[2]) == 0.0


def test_batch_matches_looped_singles_bitwise(g1_solution):
    spec, eta = g1_solution
    part = lg.Partition.uniform(0.0, 1.0, 0.02)
    adv = lg.RandomAdversary(len(spec.v_grid))
    batch = lg.run_extremal_shift_batch(spec, eta, part, [0.0], adv,
                                        n_replicas=4, seed=9)
    for i in range(4):
        single = lg.run_extremal_shift(spec, eta, part, [0.0], adv,
                                       rng=lg.replica_rng(9, i))
        assert single.outcome == batch.outcomes[i]
        assert single.model_outcome == batch.model_outcomes[i]
        assert np.array_equal(single.sq_gap, batch.sq_gap[i])
    assert batch.adversary == "random"
    assert batch.n_replicas == 4
    assert batch.n_jumps.shape == (4,)


def test_batch_outcomes_near_value(g1_solution):
    spec, eta = g1_solution
    part = lg.Partition.uniform(0.0, 1.0, 0.01)
    batch = lg.run_extremal_shift_batch(spec, eta, part, [0.0],
                                        lg.MirrorAdversary(), n_replicas=300, seed=0)
    est = lg.OutcomeEstimate.from_outcomes(batch.outcomes)
    # eta(0, 0) = 0.025 at h=0.05 and the certified radius is ~0.744
    assert est.mean <= 0.025 + 0.7444 + 3 * est.std_error


def test_engine_preconditions(g1_solution):
    spec, eta = g1_solution
    part = lg.Partition.uniform(0.0, 1.0, 0.02)
    adv = lg.ConstantAdversary()
    with pytest.raises(lg.GameSpecError):
        lg.run_extremal_shift_batch(spec, eta, part, [0.0], adv, n_replicas=1)
    with pytest.raises(lg.GameSpecError):
        bad = lg.Partition.uniform(0.0, 0.5, 0.02)  # does not end at T
        lg.run_extremal_shift(spec, eta, bad, [0.0], adv)
    with pytest.raises(lg.GameSpecError):
        lg.run_extremal_shift(spec, eta, part, [5.0], adv)  # outside the box
    lower = lg.solve_backward(spec, eta.domain, kind="lower", checkpoints=[0.0])
    with pytest.raises(lg.GameSpecError):
        lg.run_extremal_shift(spec, lower, part, [0.0], adv)
