"""Randomized invariants of the discretization, the reduction and the greedy."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cardiorom import (
    APParameters,
    EstimatorState,
    GreedyConfig,
    TrainingSets,
    assemble_operators,
    build_block_mesh,
    build_dual,
    build_hyperreduction,
    compute_beta,
    deim_select,
    direct_residual_norms,
    error_estimate,
    parameter_grid,
    pod,
    primal_residual,
    run_apodg_ei,
    solve_fom,
    solve_rom,
    update_counts,
)
from cardiorom.reaction import to_dimensionless, to_physical

from helpers import block_fom, full_rank_rom, truncated_rom
from oracles import pod_count

FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
SLOW = settings(max_examples=6, deadline=None, suppress_health_check=[HealthCheck.too_slow])

gammas = st.floats(0.0005, 0.01)
seeds = st.integers(0, 2**31 - 1)


@SLOW
@given(gamma=gammas, n_phi=st.integers(1, 6), n_r=st.integers(1, 6), n_ei=st.integers(1, 6))
def test_residual_split_identity(gamma, n_phi, n_r, n_ei):
    fom = block_fom((2, 1, 1), n_steps=12, gamma=gamma)
    rom, _ = truncated_rom(fom, n_phi, n_r, n_ei, n_ei)
    traj = solve_rom(rom)
    for k in (1, 6, 12):
        r, r_rb, r_ei = primal_residual(fom, rom, traj, fom.params, k)
        assert np.abs(r - (r_rb + r_ei)).max() <= 1e-12


@SLOW
@given(gamma=gammas, dt=st.floats(0.2, 2.0))
def test_full_rank_rom_reproduces_fom(gamma, dt):
    fom = block_fom((2, 1, 1), dt=dt, n_steps=20, gamma=gamma)
    ft = solve_fom(fom)
    rt = solve_rom(full_rank_rom(fom))
    np.testing.assert_allclose(rt.outputs, ft.outputs, rtol=0, atol=1e-8 * max(1.0, np.abs(ft.outputs).max()))
    np.testing.assert_allclose(rt.states, ft.states, rtol=0, atol=1e-8 * np.abs(ft.states).max())


@FAST
@given(seed=seeds, N=st.integers(5, 40), m=st.integers(1, 5))
def test_deim_exact_on_span(seed, N, m):
    rng = np.random.default_rng(seed)
    U = np.linalg.qr(rng.standard_normal((N, m)))[0]
    hyper = build_hyperreduction(U, U, m, m)
    W = hyper.interpolation_matrices()[0]
    f = U @ rng.standard_normal(m)
    np.testing.assert_allclose(W @ f[hyper.P_phi], f, atol=1e-8 * np.abs(f).max())
    assert len(set(deim_select(U).tolist())) == m


@FAST
@given(seed=seeds, rows=st.integers(4, 30), cols=st.integers(2, 12), tol=st.floats(1e-6, 0.9))
def test_pod_tail_energy(seed, rows, cols, tol):
    X = np.random.default_rng(seed).standard_normal((rows, cols))
    basis = pod(X, tol=tol)
    s = np.linalg.svd(X, compute_uv=False)
    assert basis.n == pod_count(s, tol)
    V = basis.vectors
    lost = np.linalg.norm(X - V @ (V.T @ X)) ** 2
    tail = np.sum(s[basis.n:] ** 2)
    assert lost == pytest.approx(tail, rel=1e-8, abs=1e-8 * np.sum(s ** 2))


@FAST
@given(orders=st.integers(0, 12), frac=st.floats(0.001, 0.999), c=st.integers(1, 12), tol=st.floats(1e-8, 1.0))
def test_update_rule_table(orders, frac, c, tol):
    # the fraction stays clear of exact powers of ten, where rounding decides the floor
    delta = tol * 10 ** (orders + frac)
    n, n_ei = update_counts(delta, delta, tol, c_rb=c, c_ei=c, n_ei_current=7)
    assert n == max(1, c * orders)
    assert n_ei == 7 + max(c, c * orders)


def test_update_rule_examples():
    assert update_counts(1e-1, 1e-1, 1e-6, c_rb=1)[0] == 5
    assert update_counts(1e-2, 1e-2, 1e-2)[0] == 1
    assert update_counts(1e-2, 1e-2, 1e-4, c_rb=11)[0] == 22


@FAST
@given(cells=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2)),
       lengths=st.tuples(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.2, 5.0)), d=st.floats(0.01, 3.0))
def test_operator_structure(cells, lengths, d):
    ops = assemble_operators(build_block_mesh(*cells, lengths=lengths), d)
    M = ops.mass.toarray()
    S = ops.stiffness.toarray()
    assert np.allclose(M, M.T, rtol=0, atol=1e-14 * np.abs(M).max())
    assert np.linalg.eigvalsh(M).min() > 0
    assert np.abs(S.sum(axis=1)).max() <= 1e-12 * np.abs(S).max()
    assert np.linalg.eigvalsh(S).max() <= 1e-12 * np.abs(S).max()
    assert ops.load.sum() == pytest.approx(np.prod(lengths), rel=1e-12)


@FAST
@given(Phi=st.floats(-120.0, 60.0))
def test_unit_round_trip(Phi):
    p = APParameters()
    assert to_physical(to_dimensionless(Phi, p), p) == pytest.approx(Phi, rel=1e-13, abs=1e-12)


@FAST
@given(rho=st.floats(1e-3, 1e3), gamma=gammas)
def test_estimate_zero_at_zero_residual(rho, gamma):
    fom = block_fom((2, 1, 1), n_steps=8, gamma=gamma)
    rom = full_rank_rom(fom)
    state = EstimatorState(beta=compute_beta(fom.EE, fom.lu), dual=build_dual(fom, 3), rho_bar=rho,
                           mode="direct")
    res = error_estimate(rom, fom.params, state, fom=fom)
    r = direct_residual_norms(fom, rom, solve_rom(rom))[0]
    assert np.all(res.delta_k >= 0)
    np.testing.assert_allclose(res.delta_k, state.prefactor * r, rtol=1e-14, atol=0)
    assert res.delta <= state.prefactor * 1e-8


@settings(max_examples=3, deadline=None)
@given(seed=st.integers(0, 1000))
def test_replay_under_fixed_seed(seed):
    fom = block_fom((6, 3, 1), lengths=(6.0, 3.0, 1.0), n_steps=40)
    sets = TrainingSets.build(parameter_grid(0.001, 0.01, 8), 0.75, seed=seed)
    cfg = GreedyConfig(tol=1e-3, c_rb=2, c_ei=4, n_ei0_phi=6, n_ei0_r=6, max_iterations=4, seed=seed)
    a = run_apodg_ei(fom, sets, cfg)
    b = run_apodg_ei(fom, TrainingSets.build(parameter_grid(0.001, 0.01, 8), 0.75, seed=seed), cfg)
    assert [r.key() for r in a.history.records] == [r.key() for r in b.history.records]
