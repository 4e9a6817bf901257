"""POD, DEIM, block Galerkin projection and the hyperreduced ROM.

The reduced model is

    EEh xh^k = AAh xh^{k-1} + dt (Mh U (P^T U)^{-1} P^T f(V xh^{k-1}) + Bh i_s^k)

with ``EEh = V^T EE V``, ``AAh = V^T AA V``, ``Mh = V^T M_f`` and ``Bh = V^T B``.
Only the rows of ``V`` selected by the interpolation indices are needed to
evaluate the nonlinearity, so the online stage never touches size-N data.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import (
    DivergenceError,
    HyperreductionBuildError,
    InvalidArgumentError,
    SelectionError,
    SingularityError,
    ValidationError,
)
from .fom import FullOrderSystem, Trajectory
from .reaction import APParameters, eval_reaction, to_dimensionless

__all__ = [
    "PodBasis",
    "BlockBasis",
    "Hyperreduction",
    "ReducedModel",
    "pod",
    "energy_count",
    "deim_select",
    "orthonormalize",
    "update_basis",
    "update_block_basis",
    "build_hyperreduction",
    "galerkin_project",
    "solve_rom",
    "save_rom",
    "load_rom",
    "ARCHIVE_VERSION",
]

ARCHIVE_VERSION = 1


@dataclass
class PodBasis:
    vectors: np.ndarray
    singular_values: np.ndarray

    @property
    def n(self) -> int:
        return self.vectors.shape[1]


def energy_count(singular_values, tol) -> int:
    """Smallest ``n`` whose squared tail energy ratio is below ``tol``."""
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0.0:
        return 0
    # tail[j] = sum_{i >= j} s2[i] / total, i.e. the energy left after keeping j modes
    tail = np.concatenate([np.cumsum(s2[::-1])[::-1], [0.0]]) / total
    for n_d in range(1, len(s2) + 1):
        if tail[n_d] < tol:
            return n_d
    return len(s2)


def _numerical_rank(s, shape, rtol=None):
    if s.size == 0 or s[0] == 0.0:
        return 0
    rtol = max(shape) * np.finfo(float).eps if rtol is None else rtol
    return int(np.sum(s > rtol * s[0]))


def pod(snapshots, n=None, tol=None, rank_rtol=None) -> PodBasis:
    """Thin-SVD POD of a snapshot matrix.

    Exactly one of ``n`` (fixed count) or ``tol`` (energy criterion) should
    be given; with neither, every mode above the numerical rank threshold
    is kept.  The count is always capped at the numerical rank.
    """
    X = np.asarray(snapshots, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidArgumentError("snapshots must be a 2-D array with at least one column")
    if n is not None and tol is not None:
        raise InvalidArgumentError("give either a mode count or an energy tolerance, not both")
    if not np.any(X):
        return PodBasis(np.zeros((X.shape[0], 0)), np.zeros(0))
    try:
        U, s, _ = la.svd(X, full_matrices=False, lapack_driver="gesdd")
    except la.LinAlgError:
        U, s, _ = la.svd(X, full_matrices=False, lapack_driver="gesvd")
    r = _numerical_rank(s, X.shape, rank_rtol)
    s = s[:r]
    if tol is not None:
        k = energy_count(s, tol)
    elif n is not None:
        k = min(int(n), r)
    else:
        k = r
    return PodBasis(U[:, :k].copy(), s.copy())


def deim_select(U) -> np.ndarray:
    """Greedy DEIM interpolation indices for the columns of ``U``."""
    U = np.asarray(U, dtype=float)
    m = U.shape[1]
    idx = np.empty(m, dtype=np.int64)
    if m == 0:
        return idx
    scale = np.abs(U).max()
    idx[0] = np.argmax(np.abs(U[:, 0]))
    if np.abs(U[idx[0], 0]) <= 1e-14 * max(scale, 1e-300):
        raise SelectionError("first column vanishes", column=0)
    for j in range(1, m):
        c = np.linalg.solve(U[idx[:j], :j], U[idx[:j], j])
        res = U[:, j] - U[:, :j] @ c
        i = int(np.argmax(np.abs(res)))
        if np.abs(res[i]) <= 1e-12 * max(scale, 1e-300):
            raise SelectionError(f"basis is rank deficient at column {j}", column=j)
        idx[j] = i
    return idx


def orthonormalize(V, W, drop_tol=1e-10):
    """Append the columns of ``W`` to orthonormal ``V`` by modified Gram-Schmidt.

    Each new column is orthogonalized twice; columns whose norm collapses
    below ``drop_tol`` times their original norm are discarded.
    """
    cols = [V[:, j] for j in range(V.shape[1])]
    for j in range(W.shape[1]):
        w = W[:, j].astype(float, copy=True)
        w0 = np.linalg.norm(w)
        if w0 == 0.0:
            continue
        for _ in range(2):
            for q in cols:
                w -= (q @ w) * q
        nw = np.linalg.norm(w)
        if nw <= drop_tol * w0:
            continue
        cols.append(w / nw)
    if not cols:
        return np.zeros((V.shape[0], 0))
    return np.column_stack(cols)


def update_basis(V_old, snapshots, n_add=None, tol=None, rank_rtol=1e-10):
    """Enlarge an orthonormal basis with the POD of the deflated snapshots.

    The snapshots are first deflated, ``Xbar = X - V V^T X``; the leading
    ``n_add`` left singular vectors of ``Xbar`` (or the energy count for
    ``tol``) are then appended and re-orthonormalized.  Modes of ``Xbar``
    below ``rank_rtol`` times the largest singular value of ``X`` are treated
    as already represented.
    """
    X = np.asarray(snapshots, dtype=float)
    V_old = np.zeros((X.shape[0], 0)) if V_old is None else np.asarray(V_old, dtype=float)
    Xbar = X - V_old @ (V_old.T @ X) if V_old.shape[1] else X
    s_ref = np.linalg.norm(X, 2) if np.any(X) else 0.0
    if s_ref == 0.0:
        return V_old.copy()
    p = pod(Xbar, rank_rtol=0.0)
    keep = int(np.sum(p.singular_values > rank_rtol * s_ref))
    if tol is not None:
        k = min(energy_count(p.singular_values, tol), keep)
    else:
        k = min(int(n_add), keep)
    if k <= 0:
        return V_old.copy()
    return orthonormalize(V_old, p.vectors[:, :k])


@dataclass
class BlockBasis:
    """Block-diagonal projection basis ``V = diag(V_phi, V_r)``."""

    V_phi: np.ndarray
    V_r: np.ndarray

    @property
    def n_phi(self) -> int:
        return self.V_phi.shape[1]

    @property
    def n_r(self) -> int:
        return self.V_r.shape[1]

    @property
    def n(self) -> int:
        return self.n_phi + self.n_r

    @property
    def N(self) -> int:
        return self.V_phi.shape[0]

    @property
    def V(self) -> np.ndarray:
        N = self.N
        out = np.zeros((2 * N, self.n))
        out[:N, : self.n_phi] = self.V_phi
        out[N:, self.n_phi:] = self.V_r
        return out

    @classmethod
    def empty(cls, N):
        return cls(np.zeros((N, 0)), np.zeros((N, 0)))

    def lift(self, xh):
        """Full states ``V xh`` for a vector or a matrix of reduced states."""
        xh = np.asarray(xh)
        top = self.V_phi @ xh[: self.n_phi]
        bottom = self.V_r @ xh[self.n_phi:]
        return np.concatenate([top, bottom], axis=0)

    def project(self, x):
        x = np.asarray(x)
        N = self.N
        return np.concatenate([self.V_phi.T @ x[:N], self.V_r.T @ x[N:]], axis=0)


def update_block_basis(basis: BlockBasis, states, n_add=(None, None), tol=(None, None)) -> BlockBasis:
    """Per-variable :func:`update_basis` on the potential and recovery blocks."""
    N = basis.N
    X = np.asarray(states)
    V_phi = update_basis(basis.V_phi, X[:N], n_add=n_add[0], tol=tol[0])
    V_r = update_basis(basis.V_r, X[N:], n_add=n_add[1], tol=tol[1])
    return BlockBasis(V_phi, V_r)


@dataclass
class Hyperreduction:
    """DEIM data for the two reaction blocks.

    ``U_phi``/``U_r`` hold an enriched nonlinear basis; the ROM uses only the
    leading ``n_ei_phi``/``n_ei_r`` columns and indices, the remaining ones
    serve the online estimate of the interpolation residual.  DEIM indices
    are nested, so the used indices are a prefix of ``P_phi``/``P_r``.
    """

    U_phi: np.ndarray
    U_r: np.ndarray
    P_phi: np.ndarray
    P_r: np.ndarray
    n_ei_phi: int
    n_ei_r: int

    @property
    def n_ei(self) -> int:
        return self.n_ei_phi + self.n_ei_r

    @property
    def n_ei_enriched(self) -> int:
        return self.U_phi.shape[1] + self.U_r.shape[1]

    @property
    def is_exact_estimate(self) -> bool:
        return self.U_phi.shape[1] == self.n_ei_phi and self.U_r.shape[1] == self.n_ei_r

    def interpolation_matrices(self, enriched=False):
        """``U (P^T U)^{-1}`` per block, for the used or the enriched basis."""
        out = []
        for U, P, m in ((self.U_phi, self.P_phi, self.n_ei_phi), (self.U_r, self.P_r, self.n_ei_r)):
            if not enriched:
                U, P = U[:, :m], P[:m]
            if U.shape[1] == 0:
                out.append(np.zeros((U.shape[0], 0)))
                continue
            PU = U[P]
            try:
                with np.errstate(all="ignore"), warnings.catch_warnings():
                    warnings.simplefilter("ignore", la.LinAlgWarning)
                    out.append(la.solve(PU.T, U.T).T)
            except la.LinAlgError as exc:
                raise HyperreductionBuildError(f"P^T U is singular: {exc}") from exc
            if not np.all(np.isfinite(out[-1])):
                raise HyperreductionBuildError("P^T U is singular")
        return out


def build_hyperreduction(U_phi, U_r, n_ei_phi, n_ei_r) -> Hyperreduction:
    """Select DEIM indices for both (enriched) nonlinear bases."""
    U_phi = np.asarray(U_phi, dtype=float)
    U_r = np.asarray(U_r, dtype=float)
    n_ei_phi = min(int(n_ei_phi), U_phi.shape[1])
    n_ei_r = min(int(n_ei_r), U_r.shape[1])
    return Hyperreduction(
        U_phi=U_phi, U_r=U_r, P_phi=deim_select(U_phi), P_r=deim_select(U_r),
        n_ei_phi=n_ei_phi, n_ei_r=n_ei_r,
    )


@dataclass
class ReducedModel:
    """Hyperreduced Galerkin ROM with precomputed dense operators.

    The one-step update is stored in propagator form,
    ``xh^k = G xh^{k-1} + H c^{k-1} + K i_s^k`` with ``G = EEh^{-1} AAh``,
    ``H = dt EEh^{-1} Mh W`` and ``K = dt EEh^{-1} Bh``, obtained from one LU
    factorization of ``EEh``.
    """

    basis: BlockBasis
    hyper: Hyperreduction
    params: APParameters
    dt: float
    n_steps: int
    protocol: object
    EEh: np.ndarray
    AAh: np.ndarray
    MW: np.ndarray  # n x n_ei, V^T M_f U (P^T U)^{-1}
    Bh: np.ndarray
    Ch: np.ndarray
    xh0: np.ndarray
    G: np.ndarray = field(repr=False, default=None)
    H: np.ndarray = field(repr=False, default=None)
    K: np.ndarray = field(repr=False, default=None)
    rows: dict = field(repr=False, default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def n_ei(self) -> int:
        return self.hyper.n_ei

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def inputs(self, params):
        return self.protocol.signal(self.times, params.t_s)

    def prepare(self):
        """Factorize ``EEh`` and cache propagators and row-sliced bases."""
        lu = la.lu_factor(self.EEh)
        self.G = la.lu_solve(lu, self.AAh)
        self.H = la.lu_solve(lu, self.dt * self.MW) if self.MW.size else np.zeros((self.n, 0))
        self.K = la.lu_solve(lu, self.dt * self.Bh)
        h = self.hyper
        for key, (m_phi, m_r) in {
            "used": (h.n_ei_phi, h.n_ei_r),
            "enriched": (h.U_phi.shape[1], h.U_r.shape[1]),
        }.items():
            P_phi, P_r = h.P_phi[:m_phi], h.P_r[:m_r]
            nodes, inv = np.unique(np.concatenate([P_phi, P_r]), return_inverse=True)
            self.rows[key] = dict(
                nodes=nodes,
                Vphi=self.basis.V_phi[nodes],
                Vr=self.basis.V_r[nodes],
                sel_phi=inv[: len(P_phi)],
                sel_r=inv[len(P_phi):],
            )
        return self


def galerkin_project(fom: FullOrderSystem, basis: BlockBasis, hyper: Hyperreduction, check=True) -> ReducedModel:
    """Project the full model onto ``basis`` and precompute the DEIM operator."""
    if basis.n == 0:
        raise InvalidArgumentError("cannot build a reduced model with an empty basis")
    if basis.N != fom.N:
        raise InvalidArgumentError(f"basis has {basis.N} rows, system has N={fom.N}")
    V = basis.V
    EEV = fom.EE @ V
    AAV = fom.E @ V
    EEh = V.T @ EEV
    AAh = V.T @ AAV
    M = fom.ops.mass
    W_phi, W_r = hyper.interpolation_matrices(enriched=False)
    MW = np.zeros((basis.n, hyper.n_ei))
    MW[: basis.n_phi, : hyper.n_ei_phi] = basis.V_phi.T @ (M @ W_phi)
    MW[basis.n_phi:, hyper.n_ei_phi:] = basis.V_r.T @ (M @ W_r)
    Bh = V.T @ fom.B
    Ch = fom.C @ V
    xh0 = basis.project(fom.initial_state())
    if check:
        rng = np.random.default_rng(0)
        z = rng.standard_normal(basis.n)
        ref = V.T @ (fom.EE @ (V @ z))
        if not np.allclose(EEh @ z, ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max(initial=1.0)):
            raise ValidationError("reduced operator failed the random probe check")
    rom = ReducedModel(
        basis=basis, hyper=hyper, params=fom.params, dt=fom.dt, n_steps=fom.n_steps,
        protocol=fom.protocol, EEh=EEh, AAh=AAh, MW=MW, Bh=Bh, Ch=Ch, xh0=xh0,
    )
    return rom.prepare()


def _reaction_rows(rom: ReducedModel, xh, params, key):
    """Reaction at the selected nodes; returns the stacked coefficient vector."""
    rows = rom.rows[key]
    nphi = rom.basis.n_phi
    Phi = rows["Vphi"] @ xh[:nphi]
    r = rows["Vr"] @ xh[nphi:]
    f_phi, f_r = eval_reaction(to_dimensionless(Phi, params), r, params)
    return np.concatenate([f_phi[rows["sel_phi"]], f_r[rows["sel_r"]]])


@dataclass
class ReducedTrajectory(Trajectory):
    """ROM solution; ``coefficients`` holds ``P'^T f`` on the enriched index set."""

    coefficients: np.ndarray | None = None


def solve_rom(rom: ReducedModel, params=None, record_coefficients=False) -> ReducedTrajectory:
    """March the reduced model.

    With ``record_coefficients`` the reaction is evaluated on the enriched
    index set as well and returned per step for residual estimation.
    """
    params = params or rom.params
    t0 = time.perf_counter()
    n_steps = rom.n_steps
    xh = rom.xh0.copy()
    inputs = rom.inputs(params)
    Xh = np.empty((rom.n, n_steps + 1))
    Xh[:, 0] = xh
    h = rom.hyper
    key = "enriched" if record_coefficients else "used"
    n_en_phi = h.U_phi.shape[1]
    used = np.concatenate([np.arange(h.n_ei_phi), n_en_phi + np.arange(h.n_ei_r)])
    coeffs = np.empty((h.n_ei_enriched, n_steps)) if record_coefficients else None
    G, H, K = rom.G, rom.H, rom.K
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        for k in range(1, n_steps + 1):
            try:
                c = _reaction_rows(rom, xh, params, key)
            except (FloatingPointError, SingularityError) as exc:
                raise DivergenceError(f"reduced reaction failed at step {k}: {exc}", step=k) from exc
            if record_coefficients:
                coeffs[:, k - 1] = c
                c = c[used]
            try:
                xh = G @ xh + H @ c + K @ inputs[k]
            except FloatingPointError as exc:
                raise DivergenceError(f"reduced state overflow at step {k}", step=k) from exc
            if not np.all(np.isfinite(xh)):
                raise DivergenceError(f"non-finite reduced state at step {k}", step=k)
            Xh[:, k] = xh
    y = rom.Ch @ Xh
    p = np.array([params.gamma, params.t_s]) if rom.protocol.kind == "s1s2-scroll" else np.array([params.gamma])
    return ReducedTrajectory(
        times=rom.times, outputs=y, parameter=p, states=Xh, nonlinear=None,
        wall_time=time.perf_counter() - t0, coefficients=coeffs,
    )


def save_rom(rom: ReducedModel, path, meta=None):
    """Write a versioned ``.npz`` archive with operators, bases and indices."""
    from dataclasses import asdict

    header = {
        "version": ARCHIVE_VERSION,
        "dt": rom.dt,
        "n_steps": rom.n_steps,
        "params": asdict(rom.params),
        "protocol": asdict(rom.protocol),
        "n_phi": rom.basis.n_phi,
        "n_r": rom.basis.n_r,
        "n_ei_phi": rom.hyper.n_ei_phi,
        "n_ei_r": rom.hyper.n_ei_r,
        **rom.meta,
        **(meta or {}),
    }
    np.savez_compressed(
        path,
        header=np.array(json.dumps(header, default=float)),
        V_phi=rom.basis.V_phi, V_r=rom.basis.V_r,
        U_phi=rom.hyper.U_phi, U_r=rom.hyper.U_r, P_phi=rom.hyper.P_phi, P_r=rom.hyper.P_r,
        EEh=rom.EEh, AAh=rom.AAh, MW=rom.MW, Bh=rom.Bh, Ch=rom.Ch, xh0=rom.xh0,
    )


def load_rom(path) -> ReducedModel:
    from .fom import StimulusProtocol

    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != ARCHIVE_VERSION:
            raise ValidationError(f"unsupported ROM archive version {header.get('version')}")
        arrays = {k: data[k] for k in data.files if k != "header"}
    basis = BlockBasis(arrays["V_phi"], arrays["V_r"])
    hyper = Hyperreduction(
        arrays["U_phi"], arrays["U_r"], arrays["P_phi"], arrays["P_r"],
        int(header["n_ei_phi"]), int(header["n_ei_r"]),
    )
    known = {"version", "dt", "n_steps", "params", "protocol", "n_phi", "n_r", "n_ei_phi", "n_ei_r"}
    rom = ReducedModel(
        basis=basis, hyper=hyper, params=APParameters(**header["params"]), dt=float(header["dt"]),
        n_steps=int(header["n_steps"]), protocol=StimulusProtocol(**header["protocol"]),
        EEh=arrays["EEh"], AAh=arrays["AAh"], MW=arrays["MW"], Bh=arrays["Bh"], Ch=arrays["Ch"],
        xh0=arrays["xh0"], meta={k: v for k, v in header.items() if k not in known},
    )
    return rom.prepare()
