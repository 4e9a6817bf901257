"""Small systems shared by the test modules."""

import numpy as np

from cardiorom import (
    APParameters,
    BlockBasis,
    StimulusProtocol,
    assemble_operators,
    build_block_mesh,
    build_fom,
    build_hyperreduction,
    galerkin_project,
    pod,
    solve_fom,
)


def block_fom(cells=(4, 4, 1), lengths=None, d_iso=1.0, dt=1.0, n_steps=30, protocol=None, gamma=0.002):
    lengths = lengths or tuple(float(c) for c in cells)
    ops = assemble_operators(build_block_mesh(*cells, lengths=lengths), d_iso)
    return build_fom(ops, APParameters(gamma=gamma), dt, n_steps, protocol or StimulusProtocol())


def scroll_protocol(**kw):
    return StimulusProtocol(kind="s1s2-scroll", **kw)


def full_rank_rom(fom):
    N = fom.N
    I = np.eye(N)
    hyper = build_hyperreduction(I, I, N, N)
    return galerkin_project(fom, BlockBasis(I.copy(), I.copy()), hyper)


def truncated_rom(fom, n_phi, n_r, n_ei_phi, n_ei_r, enriched=None, params=None):
    """POD-DEIM ROM trained on one trajectory of ``fom``."""
    traj = solve_fom(fom, params)
    N = fom.N
    V_phi = pod(traj.states[:N], n=n_phi).vectors
    V_r = pod(traj.states[N:], n=n_r).vectors
    U_phi = pod(traj.nonlinear[:N]).vectors
    U_r = pod(traj.nonlinear[N:]).vectors
    if enriched is not None:
        U_phi, U_r = U_phi[:, : enriched[0]], U_r[:, : enriched[1]]
    hyper = build_hyperreduction(U_phi, U_r, n_ei_phi, n_ei_r)
    return galerkin_project(fom, BlockBasis(V_phi, V_r), hyper), traj
