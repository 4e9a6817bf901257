"""Primal-dual a posteriori estimate of the output error of the reduced model.

Per step the estimate is

    Delta^k = (rho * beta * ||r_du|| + |1 - rho| * ||x_du||) * ||r^k||

where ``r^k`` is the primal residual of the lifted ROM trajectory in the
full equations, ``beta = 1/sigma_min(EE)``, ``x_du`` is a reduced solution
of the dual system ``EE^T x = -C^T`` with residual ``r_du``, and ``rho`` is
a correction factor estimated from the snapshots at the greedy parameter.
The residual splits into a projection part and an interpolation part,
``r = r_RB + r_EI``, which drive the two basis-size updates separately.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EstimationError, InvalidArgumentError, UndefinedMetricError
from .fom import FullOrderSystem
from .reduction import ReducedModel, ReducedTrajectory, orthonormalize, solve_rom

__all__ = [
    "DualModel",
    "EstimatorState",
    "ResidualOperator",
    "EstimateResult",
    "compute_beta",
    "build_dual",
    "primal_residual",
    "direct_residual_norms",
    "build_residual_operator",
    "residual_norms",
    "estimate_rho_bar",
    "error_estimate",
    "relative_error",
    "output_scaling",
    "metrics",
]

RHO_BOUNDS = (1e-6, 1e6)


def compute_beta(EE, lu=None, tol=1e-10) -> float:
    """``1 / sigma_min(EE)`` in the spectral norm.

    Uses Lanczos on ``(EE^T EE)^{-1}`` applied through one sparse LU
    factorization.  Systems of size two or less are handled densely.
    """
    n = EE.shape[0]
    if EE.shape != (n, n):
        raise InvalidArgumentError(f"matrix must be square, got {EE.shape}")
    if n <= 2:
        dense = EE.toarray() if sp.issparse(EE) else np.asarray(EE, dtype=float)
        smin = la.svdvals(dense).min()
        if smin == 0.0:
            raise EstimationError("matrix is singular")
        return 1.0 / smin
    if lu is None:
        try:
            lu = spla.splu(sp.csc_matrix(EE))
        except RuntimeError as exc:
            raise EstimationError(f"cannot factorize matrix: {exc}") from exc

    def op(v):
        return lu.solve(lu.solve(v, trans="T"))

    A = spla.LinearOperator((n, n), matvec=op, dtype=float)
    v0 = np.ones(n) / np.sqrt(n)
    try:
        lam = spla.eigsh(A, k=1, which="LA", v0=v0, tol=tol, maxiter=50 * n, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise EstimationError(f"smallest singular value did not converge: {exc}") from exc
    lam = float(lam[0])
    if not lam > 0 or not np.isfinite(lam):
        raise EstimationError(f"invalid eigenvalue estimate {lam}")
    return float(np.sqrt(lam))


@dataclass
class DualModel:
    V_du: np.ndarray
    xh_du: np.ndarray
    x_du: np.ndarray
    residual_norm: float
    requested: int
    breakdown: bool = False

    @property
    def n_du(self) -> int:
        return self.V_du.shape[1]

    @property
    def solution_norm(self) -> float:
        return float(np.linalg.norm(self.x_du))


def build_dual(fom: FullOrderSystem, n_du=20, breakdown_tol=1e-10) -> DualModel:
    """Reduced dual solution on the Krylov space of ``EE^{-T}`` and ``-C^T``.

    The sequence ``E_du^{-1} C_du, E_du^{-2} C_du, ...`` is orthonormalized
    as it is built (Arnoldi on the inverse).  A dependent vector stops the
    sequence early; the truncation is recorded in ``breakdown``.
    """
    if int(n_du) < 1:
        raise InvalidArgumentError(f"dual basis size must be at least 1, got {n_du}")
    E_du = fom.EE.T.tocsc()
    C_du = -np.asarray(fom.C, dtype=float)
    dim = C_du.size
    n_du = min(int(n_du), dim)
    V = np.zeros((dim, 0))
    breakdown = False
    w = C_du
    for _ in range(n_du):
        w = fom.lu.solve(w, trans="T")
        V_new = orthonormalize(V, w[:, None], drop_tol=breakdown_tol)
        if V_new.shape[1] == V.shape[1]:
            breakdown = True
            break
        V = V_new
        w = V[:, -1]
    if V.shape[1] == 0:
        return DualModel(V, np.zeros(0), np.zeros(dim), float(np.linalg.norm(C_du)), n_du, breakdown)
    Eh = V.T @ (E_du @ V)
    xh = la.solve(Eh, V.T @ C_du)
    x = V @ xh
    r = C_du - E_du @ x
    return DualModel(V, xh, x, float(np.linalg.norm(r)), n_du, breakdown)


def _lift(rom: ReducedModel, traj: ReducedTrajectory):
    return rom.basis.lift(traj.states)


def direct_residual_norms(fom: FullOrderSystem, rom: ReducedModel, traj: ReducedTrajectory, params=None,
                          return_vectors=False):
    """Residual norms from the full-order evaluation, for ``k = 1..N_t``.

    Returns ``(||r^k||, ||r_RB^k||, ||r_EI^k||)`` as arrays, or the residual
    matrices themselves (columns ``k = 1..N_t``) with ``return_vectors``.
    """
    params = params or rom.params
    X = _lift(rom, traj)
    N = fom.N
    Xprev, Xcur = X[:, :-1], X[:, 1:]
    F = fom.nonlinearity(Xprev, params)
    h = rom.hyper
    W_phi, W_r = h.interpolation_matrices(enriched=False)
    F_ei = np.concatenate([
        W_phi @ F[:N][h.P_phi[: h.n_ei_phi]],
        W_r @ F[N:][h.P_r[: h.n_ei_r]],
    ])
    inputs = rom.inputs(params)[1:].T
    base = fom.E @ Xprev - fom.EE @ Xcur + fom.dt * (fom.B @ inputs)
    r_rb = base + fom.dt * (fom.Mf @ F_ei)
    r_ei = fom.dt * (fom.Mf @ (F - F_ei))
    r = base + fom.dt * (fom.Mf @ F)
    if return_vectors:
        return r, r_rb, r_ei
    return tuple(np.linalg.norm(a, axis=0) for a in (r, r_rb, r_ei))


def primal_residual(fom: FullOrderSystem, rom: ReducedModel, traj: ReducedTrajectory, params, k):
    """Residual of the lifted ROM trajectory at step ``k >= 1`` and its split."""
    if not 1 <= k <= rom.n_steps:
        raise InvalidArgumentError(f"step index must lie in 1..{rom.n_steps}, got {k}")
    r, r_rb, r_ei = direct_residual_norms(fom, rom, traj, params, return_vectors=True)
    return r[:, k - 1], r_rb[:, k - 1], r_ei[:, k - 1]


@dataclass
class ResidualOperator:
    """Triangular factor of the affine residual pieces.

    With ``z = [xh^{k-1}; xh^k; i^k; c'; c]`` the residual is ``Q z`` for a
    fixed ``Q``; storing ``R`` from ``Q = Q_o R`` gives ``||Q z|| = ||R z||``
    with only reduced-size work per step.
    """

    R: np.ndarray
    n: int
    m: int
    n_enriched: int
    n_used: int
    used: np.ndarray
    exact_split: bool


def build_residual_operator(fom: FullOrderSystem, rom: ReducedModel) -> ResidualOperator:
    V = rom.basis.V
    h = rom.hyper
    N = fom.N
    M = fom.ops.mass
    Wp_phi, Wp_r = h.interpolation_matrices(enriched=True)
    W_phi, W_r = h.interpolation_matrices(enriched=False)

    def block(Wa, Wb):
        out = np.zeros((2 * N, Wa.shape[1] + Wb.shape[1]))
        out[:N, : Wa.shape[1]] = M @ Wa
        out[N:, Wa.shape[1]:] = M @ Wb
        return out

    Q = np.hstack([
        fom.E @ V,
        -(fom.EE @ V),
        fom.dt * fom.B,
        fom.dt * block(Wp_phi, Wp_r),
        fom.dt * block(W_phi, W_r),
    ])
    if Q.shape[1] >= Q.shape[0]:
        R = Q
    else:
        R = la.qr(Q, mode="r", overwrite_a=True, check_finite=False)[0]
        R = R[: Q.shape[1]]
    n_en_phi = h.U_phi.shape[1]
    used = np.concatenate([np.arange(h.n_ei_phi), n_en_phi + np.arange(h.n_ei_r)])
    return ResidualOperator(
        R=R, n=rom.n, m=fom.B.shape[1], n_enriched=h.n_ei_enriched, n_used=h.n_ei,
        used=used, exact_split=h.is_exact_estimate,
    )


def residual_norms(op: ResidualOperator, rom: ReducedModel, traj: ReducedTrajectory, params=None):
    """Online ``(||r^k||, ||r_RB^k||, ||r_EI^k||)`` for ``k = 1..N_t``.

    Requires a trajectory solved with ``record_coefficients=True``.
    """
    if traj.coefficients is None:
        raise InvalidArgumentError("trajectory lacks reaction coefficients; solve with record_coefficients=True")
    params = params or rom.params
    Xh = traj.states
    Nt = Xh.shape[1] - 1
    Cp = traj.coefficients
    C = Cp[op.used]
    I = rom.inputs(params)[1:].T
    zeros_c = np.zeros((op.n_used, Nt))
    head = np.vstack([Xh[:, :-1], Xh[:, 1:], I])
    Z_full = np.vstack([head, Cp, zeros_c])
    Z_rb = np.vstack([head, np.zeros_like(Cp), C])
    r = np.linalg.norm(op.R @ Z_full, axis=0)
    r_rb = np.linalg.norm(op.R @ Z_rb, axis=0)
    if op.exact_split:
        r_ei = np.zeros(Nt)
    else:
        Z_ei = np.vstack([np.zeros_like(head), Cp, -C])
        r_ei = np.linalg.norm(op.R @ Z_ei, axis=0)
    return r, r_rb, r_ei


def estimate_rho_bar(errors, residual_norms_, beta) -> float:
    """Median of ``||x^k - x~^k|| / (beta ||r^k||)`` over steps with nonzero residual.

    Clamped to ``[1e-6, 1e6]``; returns 1 if every residual is zero.
    """
    e = np.asarray(errors, dtype=float)
    r = np.asarray(residual_norms_, dtype=float)
    mask = r > 0
    if not np.any(mask):
        return 1.0
    ratios = e[mask] / (beta * r[mask])
    return float(np.clip(np.median(ratios), *RHO_BOUNDS))


@dataclass
class EstimatorState:
    beta: float
    dual: DualModel
    rho_bar: float = 1.0
    scaling: float = 1.0
    mode: str = "online"
    operator: ResidualOperator | None = field(default=None, repr=False)

    @property
    def prefactor(self) -> float:
        return self.rho_bar * self.beta * self.dual.residual_norm + abs(1.0 - self.rho_bar) * self.dual.solution_norm


@dataclass
class EstimateResult:
    delta_k: np.ndarray
    delta: float
    delta_rb: float
    delta_ei: float
    trajectory: ReducedTrajectory | None = None


def error_estimate(rom: ReducedModel, params, state: EstimatorState, fom: FullOrderSystem | None = None,
                   traj: ReducedTrajectory | None = None) -> EstimateResult:
    """Per-step estimates and their means over ``k = 1..N_t``.

    ``state.mode`` selects the residual evaluation: ``online`` uses the
    precomputed factor in ``state.operator``; ``direct`` evaluates in full
    dimension and needs ``fom``.
    """
    if state.mode == "online":
        if traj is None or traj.coefficients is None:
            traj = solve_rom(rom, params, record_coefficients=True)
        r, r_rb, r_ei = residual_norms(state.operator, rom, traj, params)
    elif state.mode == "direct":
        if fom is None:
            raise InvalidArgumentError("direct residual evaluation needs the full-order system")
        traj = traj or solve_rom(rom, params)
        r, r_rb, r_ei = direct_residual_norms(fom, rom, traj, params)
    else:
        raise InvalidArgumentError(f"unknown residual mode {state.mode!r}")
    pre = state.prefactor
    delta_k = pre * r
    Nt = max(len(r), 1)
    return EstimateResult(
        delta_k=delta_k,
        delta=float(delta_k.sum() / Nt),
        delta_rb=float(pre * r_rb.sum() / Nt),
        delta_ei=float(pre * r_ei.sum() / Nt),
        trajectory=traj,
    )


def relative_error(y_fom, y_rom) -> float:
    """``||Y - Yhat||_2 / ||Y||_2`` over the whole output series."""
    Y = np.asarray(y_fom, dtype=float).ravel()
    Yh = np.asarray(y_rom, dtype=float).ravel()
    if Y.shape != Yh.shape:
        raise InvalidArgumentError(f"output series differ in length: {Y.shape} vs {Yh.shape}")
    nY = np.linalg.norm(Y)
    if nY == 0.0:
        raise UndefinedMetricError("reference output is identically zero")
    return float(np.linalg.norm(Y - Yh) / nY)


def output_scaling(y, mode="max") -> float:
    """Scale for the estimated error.

    ``max`` uses ``max(Y)``, ``maxabs`` uses ``max|Y|``, ``l2`` uses
    ``||Y||_2``.  A non-positive max falls back to ``||Y||_2`` with a warning.
    """
    Y = np.asarray(y, dtype=float).ravel()
    nY = float(np.linalg.norm(Y))
    if nY == 0.0:
        raise UndefinedMetricError("reference output is identically zero")
    if mode == "l2":
        return nY
    if mode == "max":
        s = float(Y.max())
    elif mode == "maxabs":
        s = float(np.abs(Y).max())
    else:
        raise InvalidArgumentError(f"unknown scaling mode {mode!r}")
    if s <= 0.0:
        warnings.warn("maximum of the output is not positive; scaling by its 2-norm instead", RuntimeWarning,
                      stacklevel=2)
        return nY
    return s


def metrics(y_fom, y_rom, scaling_mode="max", deltas=None):
    """Relative true error, scaling and (optionally) the scaled maximal estimate."""
    out = {"eps_rel": relative_error(y_fom, y_rom), "scaling": output_scaling(y_fom, scaling_mode)}
    if deltas is not None:
        out["eps_max"] = float(np.max(deltas)) / out["scaling"]
    return out
