import csv
import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from cardiorom import (
    APParameters,
    DivergenceError,
    InvalidArgumentError,
    StimulusProtocol,
    ValidationError,
    assemble_operators,
    build_block_mesh,
    build_fom,
    solve_fom,
    sustained_activity,
)
from cardiorom.assembly import AssembledOperators
from cardiorom.fom import imex_step, write_trajectory_csv

from helpers import block_fom, scroll_protocol
from oracles import dense_step


def test_block_structure():
    fom = block_fom((2, 1, 1), n_steps=1)
    N = fom.N
    M = fom.ops.mass.toarray()
    E = fom.E.toarray()
    np.testing.assert_array_equal(E[:N, :N], M)
    np.testing.assert_allclose(E[N:, N:], 12.9 * M, rtol=1e-15)
    assert not np.any(E[:N, N:]) and not np.any(E[N:, :N])
    A = fom.A.toarray()
    np.testing.assert_array_equal(A[:N, :N], fom.ops.stiffness.toarray())
    assert not np.any(A[N:])
    np.testing.assert_allclose(fom.EE.toarray(), E - fom.dt * A, rtol=1e-15)
    assert fom.B.shape == (2 * N, 1) and not np.any(fom.B[N:])
    assert not np.any(fom.C[N:])


def test_planar_initial_condition():
    fom = block_fom((2, 1, 1), n_steps=1)
    x0 = fom.initial_state()
    N = fom.N
    excited = np.flatnonzero(x0[:N] == -10.0)
    assert len(excited) == 4
    np.testing.assert_array_equal(np.sort(excited), np.sort(fom.ops.node_sets["left_edge"]))
    assert np.all(np.delete(x0[:N], excited) == -80.0)
    assert not np.any(x0[N:])


def test_scroll_initial_condition_at_rest():
    fom = block_fom((2, 2, 1), n_steps=1, protocol=scroll_protocol())
    x0 = fom.initial_state()
    assert np.all(x0[: fom.N] == -80.0) and not np.any(x0[fom.N:])


@pytest.mark.parametrize("dt,n", [(0.0, 1), (-1.0, 1), (1.0, -1), (1.0, 1.5)])
def test_bad_time_grid(dt, n):
    ops = assemble_operators(build_block_mesh(1, 1, 1), 1.0)
    with pytest.raises(InvalidArgumentError):
        build_fom(ops, APParameters(), dt, n)


def test_unknown_node_set():
    ops = assemble_operators(build_block_mesh(1, 1, 1), 1.0)
    with pytest.raises(ValidationError):
        build_fom(ops, APParameters(), 1.0, 1, StimulusProtocol(planar_set="nowhere"))


def test_unknown_protocol_kind():
    with pytest.raises(InvalidArgumentError):
        StimulusProtocol(kind="s3")


def test_pure_mass_system_is_stationary():
    ops = assemble_operators(build_block_mesh(2, 1, 1), 1.0)
    ops = dataclasses.replace(ops, stiffness=sp.csr_matrix(ops.stiffness.shape))
    fom = build_fom(ops, APParameters(), 0.5, 3, StimulusProtocol(kind="none"))
    fom.nonlinearity = lambda x, params: np.zeros_like(x)
    x = np.random.default_rng(0).standard_normal(2 * fom.N)
    x1 = imex_step(fom, x, 1, fom.params)
    np.testing.assert_allclose(x1, x, rtol=1e-13, atol=1e-13)


def test_rest_state_is_stationary():
    fom = block_fom((3, 2, 1), n_steps=20, protocol=StimulusProtocol(kind="none"))
    traj = solve_fom(fom)
    np.testing.assert_allclose(traj.states[: fom.N], -80.0, atol=1e-10)
    np.testing.assert_allclose(traj.states[fom.N:], 0.0, atol=1e-12)


def test_scalar_step_by_hand():
    # one node: M = 1, S = 0, so x1 = x0 + dt f(x0) in both blocks with beta_t on r
    one = AssembledOperators(
        mass=sp.csr_matrix(np.eye(1)), stiffness=sp.csr_matrix((1, 1)), load=np.ones(1), flux=np.ones(1),
        node_sets={"left_edge": np.array([0])},
    )
    p = APParameters()
    fom = build_fom(one, p, 0.5, 1, StimulusProtocol(kind="none"))
    x0 = np.array([-30.0, 0.2])
    phi, r = 0.5, 0.2
    f_phi = 100 / 12.9 * (8 * phi * (phi - 0.01) * (1 - phi) - r * phi)
    f_r = (0.002 + 0.2 * r / (0.3 + phi)) * (-r - 8 * phi * (phi - 0.15 - 1))
    x1 = imex_step(fom, x0, 1, p)
    assert x1[0] == pytest.approx(-30.0 + 0.5 * f_phi, rel=1e-14)
    assert x1[1] == pytest.approx(0.2 + 0.5 * f_r / 12.9, rel=1e-14)


def test_step_matches_dense_oracle():
    fom = block_fom((3, 2, 1), dt=0.7, n_steps=1)
    x = fom.initial_state()
    x[fom.N:] = 0.05
    np.testing.assert_allclose(imex_step(fom, x, 1, fom.params), dense_step(fom, x, fom.inputs(fom.params)[1],
                                                                             fom.params), rtol=1e-12, atol=1e-10)


def test_scroll_step_matches_dense_oracle_inside_window():
    fom = block_fom((3, 3, 1), dt=2.0, n_steps=10, protocol=scroll_protocol())
    params = fom.params.with_parameter((0.002, 4.0))
    x = fom.initial_state()
    k = 3  # t = 6, inside the S2 window
    u = fom.inputs(params)[k]
    np.testing.assert_array_equal(u, [10.0, 10.0])
    np.testing.assert_allclose(imex_step(fom, x, k, params), dense_step(fom, x, u, params), rtol=1e-12,
                               atol=1e-10)


def test_zero_steps():
    fom = block_fom((2, 1, 1), n_steps=0)
    traj = solve_fom(fom)
    assert traj.outputs.shape == (1,) and traj.states.shape == (2 * fom.N, 1)
    assert traj.outputs[0] == fom.C @ fom.initial_state()


def test_outputs_match_stored_states():
    fom = block_fom((4, 3, 1), n_steps=15)
    traj = solve_fom(fom)
    np.testing.assert_array_equal(traj.outputs, [fom.C @ np.ascontiguousarray(traj.states[:, k]) for k in range(16)])
    assert traj.nonlinear.shape == (2 * fom.N, 15)
    np.testing.assert_array_equal(traj.nonlinear[:, 4], fom.nonlinearity(traj.states[:, 4], fom.params))


def test_planar_wave_single_upstroke():
    fom = block_fom((8, 8, 2), lengths=(8.0, 8.0, 2.0), dt=1.0, n_steps=400, gamma=0.002)
    y = solve_fom(fom, store_states=False, store_nonlinear=False).outputs[1:]  # k = 0 is the initial step profile
    peak = int(np.argmax(np.abs(y)))
    assert y[peak] < 0 and peak < 50  # front moving in +x gives negative flux
    # one depolarization excursion, then one recovery excursion of opposite sign
    big = np.abs(y) > 0.05 * abs(y[peak])
    signs = np.sign(y[big])
    assert np.count_nonzero(np.diff(signs)) == 1
    assert abs(y[-1]) < 0.02 * abs(y[peak])


def test_first_order_self_convergence():
    ops = assemble_operators(build_block_mesh(20, 1, 1, lengths=(10.0, 1.0, 1.0)), 1.0)
    T = 20.0
    final = {}
    for dt in (0.2, 0.1, 0.05):
        fom = build_fom(ops, APParameters(), dt, int(round(T / dt)))
        final[dt] = solve_fom(fom, store_nonlinear=False).states[:, -1]
    e1 = np.linalg.norm(final[0.2] - final[0.1])
    e2 = np.linalg.norm(final[0.1] - final[0.05])
    assert 1.5 <= e1 / e2 <= 2.5


def test_stimulus_windows():
    pr = StimulusProtocol(kind="s1s2-scroll", amplitude=10.0, s1_window=10.0, s2_duration=20.0)
    t = 2.0 * np.arange(301)
    u = pr.signal(t, 484.0)
    assert np.count_nonzero(u[:, 0]) == 5
    assert np.count_nonzero(u[:, 1]) == 10
    np.testing.assert_array_equal(np.flatnonzero(u[:, 1]), np.arange(243, 253))
    assert set(np.unique(u)) == {0.0, 10.0}
    assert not np.any(StimulusProtocol(kind="none").signal(t, 0.0))
    assert not np.any(StimulusProtocol().signal(t, 0.0))


def test_divergence_reports_step():
    fom = block_fom((2, 1, 1), dt=1.0, n_steps=5)
    fom.nonlinearity = lambda x, params: np.full_like(x, np.inf)
    with pytest.raises(DivergenceError) as exc:
        solve_fom(fom)
    assert exc.value.step == 1


def test_trajectory_csv(tmp_path):
    fom = block_fom((2, 1, 1), n_steps=3)
    traj = solve_fom(fom)
    write_trajectory_csv(tmp_path / "y.csv", traj)
    rows = list(csv.reader(open(tmp_path / "y.csv", encoding="utf-8")))
    assert rows[0] == ["t", "y"]
    assert len(rows) == 5
    assert float(rows[-1][1]) == traj.outputs[-1]


def test_sustained_activity_classifier():
    t = np.arange(0.0, 1001.0, 2.0)
    Phi = np.full((3, t.size), -80.0)
    assert not sustained_activity(Phi, t)
    Phi[1, 300] = 10.0  # excitation long before the end
    assert not sustained_activity(Phi, t)
    Phi[2, -10] = -30.0  # inside the last 100 ms
    assert sustained_activity(Phi, t)
    with pytest.raises(InvalidArgumentError):
        sustained_activity(Phi[:, :-1], t)
