"""Adaptive POD-greedy construction of the hyperreduced ROM.

``run_apodg_ei`` evaluates the error estimate on a fixed training set.
``run_apodg_ei_adapt`` evaluates it on a small coarse set only, fits a
radial basis surrogate of the estimate, and moves the worst-predicted
samples from a fine set into the coarse set while dropping coarse samples
that already meet the tolerance.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import DivergenceError, EstimationError, InvalidArgumentError, SingularityError
from .estimation import (
    EstimatorState,
    build_dual,
    build_residual_operator,
    compute_beta,
    direct_residual_norms,
    error_estimate,
    estimate_rho_bar,
    output_scaling,
    residual_norms,
)
from .fom import FullOrderSystem, solve_fom
from .reduction import (
    BlockBasis,
    ReducedModel,
    build_hyperreduction,
    galerkin_project,
    solve_rom,
    update_block_basis,
)

__all__ = [
    "GreedyConfig",
    "TrainingSets",
    "IterationRecord",
    "GreedyHistory",
    "GreedyResult",
    "RbfSurrogate",
    "update_counts",
    "fit_rbf",
    "eval_rbf",
    "adapt_training_set",
    "parameter_grid",
    "split_samples",
    "run_apodg_ei",
    "run_apodg_ei_adapt",
    "write_history_csv",
    "resolve_residual_mode",
]


def update_counts(delta_rb, delta_ei, tol, c_rb=1, c_ei=1, n_ei_current=0, max_orders=16):
    """Basis increments from the two error contributions.

    ``n = c_rb * floor(log10(delta_rb / tol))`` new projection vectors per
    block, at least 1, and ``n_ei_current + c_ei * floor(log10(delta_ei / tol))``
    interpolation points, growing by at least ``c_ei``.  The order count is
    capped at ``max_orders`` so that an infinite estimate stays finite.
    """
    if not tol > 0:
        raise InvalidArgumentError(f"tolerance must be positive, got {tol}")
    if int(c_rb) != c_rb or int(c_ei) != c_ei or c_rb < 1 or c_ei < 1:
        raise InvalidArgumentError("update multipliers must be positive integers")

    def orders(delta):
        if not delta > 0:  # zero or nan
            return 0
        if math.isinf(delta):
            return max_orders
        return min(int(math.floor(math.log10(delta / tol))), max_orders)

    n = max(1, int(c_rb) * orders(delta_rb))
    n_ei = int(n_ei_current) + max(int(c_ei), int(c_ei) * orders(delta_ei))
    return n, n_ei


@dataclass
class RbfSurrogate:
    centers: np.ndarray  # normalized coordinates
    weights: np.ndarray
    tail: np.ndarray
    kernel: str
    shape: float
    lo: np.ndarray
    span: np.ndarray

    def __call__(self, p):
        return eval_rbf(self, p)


def _kernel(r, kind, shape):
    if kind == "tps":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = r * r * np.log(r)
        return np.where(r > 0, out, 0.0)
    if kind == "gaussian":
        return np.exp(-((shape * r) ** 2))
    raise InvalidArgumentError(f"unknown kernel {kind!r}; expected 'tps' or 'gaussian'")


def _tail_basis(x, degree):
    cols = [np.ones(len(x))]
    if degree >= 1:
        cols += [x[:, j] for j in range(x.shape[1])]
    return np.column_stack(cols)


def fit_rbf(centers, values, kernel="tps", shape=1.0, box=None, jitter=1e-10) -> RbfSurrogate:
    """Interpolating radial basis function with a linear polynomial tail.

    Coordinates are mapped to the unit box (``box = (lo, hi)`` or the
    bounding box of the centers).  The tail falls back to a constant when
    the centers do not determine a linear polynomial.  A singular system is
    retried once with a diagonal jitter.
    """
    X = np.asarray(centers, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    v = np.asarray(values, dtype=float).ravel()
    if len(X) != len(v):
        raise InvalidArgumentError("centers and values differ in length")
    if len(np.unique(X, axis=0)) < 2 or len(np.unique(X, axis=0)) != len(X):
        raise InvalidArgumentError("need at least two distinct centers and no duplicates")
    if box is None:
        lo, hi = X.min(axis=0), X.max(axis=0)
    else:
        lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    span = np.where(hi > lo, hi - lo, 1.0)
    Z = (X - lo) / span
    degree = 1
    if np.linalg.matrix_rank(_tail_basis(Z, 1)) < Z.shape[1] + 1:
        degree = 0
    P = _tail_basis(Z, degree)
    K = _kernel(np.linalg.norm(Z[:, None] - Z[None], axis=2), kernel, shape)
    m, q = P.shape
    A = np.zeros((m + q, m + q))
    A[:m, :m] = K
    A[:m, m:] = P
    A[m:, :m] = P.T
    rhs = np.concatenate([v, np.zeros(q)])
    for attempt in range(2):
        try:
            with np.errstate(all="raise"):
                sol = la.solve(A, rhs)
            if np.all(np.isfinite(sol)):
                break
        except (la.LinAlgError, FloatingPointError):
            pass
        if attempt == 1:
            raise EstimationError("radial basis interpolation system is singular")
        A[:m, :m] += jitter * max(np.abs(K).max(), 1.0) * np.eye(m)
    return RbfSurrogate(Z, sol[:m], sol[m:], kernel, float(shape), lo, span)


def eval_rbf(s: RbfSurrogate, p) -> np.ndarray:
    Xp = np.asarray(p, dtype=float)
    if Xp.ndim == 0:
        Xp = Xp[None, None]
    elif Xp.ndim == 1:
        Xp = Xp[:, None] if s.centers.shape[1] == 1 else Xp[None, :]
    Z = (Xp - s.lo) / s.span
    K = _kernel(np.linalg.norm(Z[:, None] - s.centers[None], axis=2), s.kernel, s.shape)
    degree = 1 if len(s.tail) == s.centers.shape[1] + 1 else 0
    return K @ s.weights + _tail_basis(Z, degree) @ s.tail


def adapt_training_set(coarse, fine, delta_coarse, delta_fine, tol, n_add):
    """Drop converged coarse samples and promote the worst fine samples.

    ``coarse`` and ``fine`` are disjoint index arrays.  Coarse samples with
    estimate below ``tol`` are removed, except the argmax, which is always
    kept.  The ``n_add`` fine samples with the largest surrogate value move
    to the coarse set.  Returns sorted ``(coarse, fine)``.
    """
    coarse = np.asarray(coarse, dtype=np.int64)
    fine = np.asarray(fine, dtype=np.int64)
    dc = np.asarray(delta_coarse, dtype=float)
    df = np.asarray(delta_fine, dtype=float)
    if np.intersect1d(coarse, fine).size:
        raise InvalidArgumentError("coarse and fine sets must be disjoint")
    if len(dc) != len(coarse) or len(df) != len(fine):
        raise InvalidArgumentError("estimate arrays must match the set sizes")
    keep = ~(dc < tol)
    if len(coarse):
        keep[_argmax(dc)] = True
    k = min(int(n_add), len(fine))
    # stable descending order; ties resolved towards the smaller index
    order = np.argsort(-np.nan_to_num(df, nan=-np.inf), kind="stable")[:k]
    moved = fine[order]
    new_coarse = np.sort(np.concatenate([coarse[keep], moved]))
    new_fine = np.sort(np.setdiff1d(fine, moved))
    return new_coarse, new_fine


def _argmax(a):
    a = np.asarray(a, dtype=float)
    return int(np.argmax(np.where(np.isnan(a), np.inf, a)))


def parameter_grid(lower, upper, counts) -> np.ndarray:
    """Tensor grid of ``counts`` equispaced values per parameter, first one slowest."""
    axes = [np.linspace(lo, hi, int(n)) for lo, hi, n in zip(np.atleast_1d(lower), np.atleast_1d(upper),
                                                                np.atleast_1d(counts))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def split_samples(samples, fraction, rng):
    """Random split into two sorted subsets of sizes ``round(fraction * n)`` and the rest."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    k = int(round(fraction * n))
    perm = rng.permutation(n)
    a, b = np.sort(perm[:k]), np.sort(perm[k:])
    return samples[a], samples[b]


@dataclass
class TrainingSets:
    """Parameter samples as ``(n_samples, n_params)`` arrays."""

    train: np.ndarray
    test: np.ndarray = None
    coarse: np.ndarray = None
    fine: np.ndarray = None
    names: tuple = ("gamma",)

    def __post_init__(self):
        for name in ("train", "test", "coarse", "fine"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                setattr(self, name, val[:, None] if val.ndim == 1 else val)

    @classmethod
    def build(cls, samples, train_fraction, coarse_fraction=None, seed=0, names=("gamma",)):
        """Random train/test split, then an optional coarse/fine split of the train part."""
        rng = np.random.default_rng(seed)
        train, test = split_samples(samples, train_fraction, rng)
        coarse = fine = None
        if coarse_fraction is not None:
            coarse, fine = split_samples(train, coarse_fraction, rng)
        return cls(train=train, test=test, coarse=coarse, fine=fine, names=tuple(names))


@dataclass
class GreedyConfig:
    tol: float = 1e-2
    c_rb: int = 1
    c_ei: int = 1
    svd_tol_phi: float = 0.5
    svd_tol_r: float = 0.5
    n_ei0_phi: int = 16
    n_ei0_r: int = 16
    max_iterations: int = 20
    seed: int = 0
    n_du: int = 20
    ei_enrichment: float = 2.0
    residual_mode: str = "auto"
    scaling_mode: str = "none"
    n_add: int = 1
    rbf_kernel: str = "tps"
    rbf_shape: float = 1.0
    threads: int = 1
    max_orders: int = 16

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be positive, got {self.tol}")
        for name in ("c_rb", "c_ei", "n_ei0_phi", "n_ei0_r", "max_iterations", "n_du", "n_add", "threads"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {v}")
        if self.residual_mode not in ("auto", "online", "direct"):
            raise InvalidArgumentError(f"unknown residual mode {self.residual_mode!r}")
        if self.scaling_mode not in ("none", "max", "maxabs", "l2"):
            raise InvalidArgumentError(f"unknown scaling mode {self.scaling_mode!r}")
        if self.ei_enrichment < 1.0:
            raise InvalidArgumentError("ei_enrichment must be at least 1")


@dataclass
class IterationRecord:
    iteration: int
    snapshot_parameter: tuple
    p_star: tuple
    eps: float
    delta_rb: float
    delta_ei: float
    n_phi: int
    n_r: int
    n_ei_phi: int
    n_ei_r: int
    n_evaluated: int
    n_fine: int
    rho_bar: float
    scaling: float
    eps_max: float
    seconds: float
    evaluated: np.ndarray = field(repr=False, default=None)  # parameter table indices
    estimates: np.ndarray = field(repr=False, default=None)  # scaled Delta(p) on them

    @property
    def n(self) -> int:
        return self.n_phi + self.n_r

    @property
    def n_ei(self) -> int:
        return self.n_ei_phi + self.n_ei_r

    def key(self):
        """Everything except timings, for reproducibility checks."""
        return (
            self.iteration, self.snapshot_parameter, self.p_star, self.eps, self.delta_rb, self.delta_ei,
            self.n_phi, self.n_r, self.n_ei_phi, self.n_ei_r, self.n_evaluated, self.n_fine, self.rho_bar,
            tuple(self.evaluated.tolist()), tuple(self.estimates.tolist()),
        )


@dataclass
class GreedyHistory:
    records: list = field(default_factory=list)
    names: tuple = ("gamma",)

    def append(self, rec: IterationRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self.records))


@dataclass
class GreedyResult:
    rom: ReducedModel
    history: GreedyHistory
    converged: bool
    estimator: EstimatorState
    parameters: np.ndarray
    setup_seconds: float = 0.0

    @property
    def total_seconds(self) -> float:
        return self.setup_seconds + self.history.total_seconds


def write_history_csv(path, history: GreedyHistory):
    names = list(history.names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", *names, "eps", "delta_rb", "delta_ei", "n_phi", "n_r", "n_ei_phi", "n_ei_r",
                    "n_coarse", "eps_max", "seconds"])
        for r in history.records:
            w.writerow([r.iteration, *(repr(float(v)) for v in r.p_star), repr(float(r.eps)), repr(float(r.delta_rb)),
                        repr(float(r.delta_ei)), r.n_phi, r.n_r, r.n_ei_phi, r.n_ei_r, r.n_evaluated,
                        repr(float(r.eps_max)), f"{r.seconds:.6f}"])


class _NonlinearSnapshots:
    """Compressed running store of nonlinear snapshots, ``U diag(s)``."""

    def __init__(self, rtol=1e-10):
        self.rtol = rtol
        self.US = None
        self.U = None
        self.s = None

    def add(self, F):
        X = F if self.US is None else np.hstack([self.US, F])
        try:
            U, s, _ = la.svd(X, full_matrices=False, lapack_driver="gesdd")
        except la.LinAlgError:
            U, s, _ = la.svd(X, full_matrices=False, lapack_driver="gesvd")
        r = int(np.sum(s > self.rtol * s[0])) if s.size and s[0] > 0 else 0
        self.U, self.s = U[:, :r], s[:r]
        self.US = self.U * self.s

    @property
    def rank(self) -> int:
        return 0 if self.U is None else self.U.shape[1]


def _evaluate(fom, rom, state, params):
    try:
        est = error_estimate(rom, params, state, fom=fom)
    except (DivergenceError, SingularityError, FloatingPointError):
        return math.inf, math.inf, math.inf
    return est.delta, est.delta_rb, est.delta_ei


def _rho_bar(fom, rom, state, params, fom_traj):
    try:
        if state.mode == "online":
            rt = solve_rom(rom, params, record_coefficients=True)
            r = residual_norms(state.operator, rom, rt, params)[0]
        else:
            rt = solve_rom(rom, params)
            r = direct_residual_norms(fom, rom, rt, params)[0]
    except (DivergenceError, SingularityError, FloatingPointError):
        return 1.0
    err = np.linalg.norm(fom_traj.states[:, 1:] - rom.basis.lift(rt.states[:, 1:]), axis=0)
    return estimate_rho_bar(err, r, state.beta)


def resolve_residual_mode(cfg, fom, rom):
    """``online`` when the residual factor compresses, ``direct`` otherwise (for ``auto``)."""
    if cfg.residual_mode != "auto":
        return cfg.residual_mode
    n_cols = 2 * rom.n + fom.B.shape[1] + rom.hyper.n_ei_enriched + rom.hyper.n_ei
    return "online" if n_cols < fom.N else "direct"


def _greedy(fom: FullOrderSystem, table, eval_idx, fine_idx, cfg: GreedyConfig, names, adaptive):
    t_setup = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    base = fom.params
    N = fom.N
    beta = compute_beta(fom.EE, fom.lu)
    dual = build_dual(fom, cfg.n_du)
    setup = time.perf_counter() - t_setup

    p_idx = int(eval_idx[rng.integers(len(eval_idx))])
    basis = BlockBasis.empty(N)
    store = (_NonlinearSnapshots(), _NonlinearSnapshots())
    n_add = None
    n_ei = [int(cfg.n_ei0_phi), int(cfg.n_ei0_r)]
    history = GreedyHistory(names=tuple(names))
    cache = {}
    converged = False
    rom = state = None
    pool = ThreadPoolExecutor(max_workers=int(cfg.threads)) if cfg.threads > 1 else None

    try:
        for it in range(1, int(cfg.max_iterations) + 1):
            t0 = time.perf_counter()
            params_star = base.with_parameter(table[p_idx])
            if p_idx not in cache:
                cache[p_idx] = solve_fom(fom, params_star)
            traj = cache[p_idx]

            if n_add is None:
                basis = update_block_basis(basis, traj.states, tol=(cfg.svd_tol_phi, cfg.svd_tol_r))
            else:
                basis = update_block_basis(basis, traj.states, n_add=(n_add, n_add))
            store[0].add(traj.nonlinear[:N])
            store[1].add(traj.nonlinear[N:])
            used, enriched = [], []
            for b in range(2):
                m = min(n_ei[b], store[b].rank)
                used.append(m)
                enriched.append(min(store[b].rank, max(int(math.ceil(cfg.ei_enrichment * m)), m + 1)))
            hyper = build_hyperreduction(store[0].U[:, : enriched[0]], store[1].U[:, : enriched[1]], *used)
            rom = galerkin_project(fom, basis, hyper)

            mode = resolve_residual_mode(cfg, fom, rom)
            state = EstimatorState(beta=beta, dual=dual, mode=mode)
            if mode == "online":
                state.operator = build_residual_operator(fom, rom)
            state.rho_bar = _rho_bar(fom, rom, state, params_star, traj)
            state.scaling = 1.0 if cfg.scaling_mode == "none" else output_scaling(traj.outputs, cfg.scaling_mode)
            report_scale = output_scaling(traj.outputs, "max")

            plist = [base.with_parameter(table[i]) for i in eval_idx]
            if pool is not None:
                vals = list(pool.map(lambda p: _evaluate(fom, rom, state, p), plist))
            else:
                vals = [_evaluate(fom, rom, state, p) for p in plist]
            vals = np.asarray(vals, dtype=float) / state.scaling
            delta, d_rb, d_ei = vals[:, 0], vals[:, 1], vals[:, 2]
            j = _argmax(delta)
            eps = float(delta[j])
            snap_p = tuple(float(v) for v in table[p_idx])
            p_idx = int(eval_idx[j])

            rec = IterationRecord(
                iteration=it, snapshot_parameter=snap_p, p_star=tuple(float(v) for v in table[p_idx]),
                eps=eps, delta_rb=float(d_rb[j]), delta_ei=float(d_ei[j]),
                n_phi=basis.n_phi, n_r=basis.n_r, n_ei_phi=hyper.n_ei_phi, n_ei_r=hyper.n_ei_r,
                n_evaluated=len(eval_idx), n_fine=len(fine_idx), rho_bar=state.rho_bar, scaling=state.scaling,
                eps_max=eps * state.scaling / report_scale, seconds=0.0, evaluated=np.asarray(eval_idx).copy(), estimates=delta.copy(),
            )
            if eps < cfg.tol:
                converged = True
                rec.seconds = time.perf_counter() - t0
                history.append(rec)
                break

            if adaptive and len(fine_idx):
                surrogate_vals = _surrogate(table, eval_idx, fine_idx, delta, cfg)
                eval_idx, fine_idx = adapt_training_set(eval_idx, fine_idx, delta, surrogate_vals, cfg.tol,
                                                        cfg.n_add)
            n_add, n_ei_total = update_counts(rec.delta_rb, rec.delta_ei, cfg.tol, cfg.c_rb, cfg.c_ei, 0,
                                              cfg.max_orders)
            n_ei = [n_ei[0] + n_ei_total, n_ei[1] + n_ei_total]
            rec.seconds = time.perf_counter() - t0
            history.append(rec)
    finally:
        if pool is not None:
            pool.shutdown()

    return GreedyResult(rom=rom, history=history, converged=converged, estimator=state, parameters=table,
                        setup_seconds=setup)


def _surrogate(table, coarse, fine, delta, cfg):
    """RBF prediction of the estimate on the fine set, fitted in log10 scale."""
    finite = np.isfinite(delta) & (delta > 0)
    if finite.sum() < 2:
        # nothing to interpolate: rank fine samples by distance to the worst coarse sample
        worst = table[coarse[_argmax(delta)]]
        span = np.ptp(table, axis=0)
        span = np.where(span > 0, span, 1.0)
        return -np.linalg.norm((table[fine] - worst) / span, axis=1)
    logd = np.log10(np.where(finite, delta, 1.0))
    hi = logd[finite].max()
    lo_v = logd[finite].min()
    logd = np.where(np.isfinite(delta) & (delta > 0), logd, np.where(np.isinf(delta), hi + 1.0, lo_v - 1.0))
    box = (table.min(axis=0), table.max(axis=0))
    s = fit_rbf(table[coarse], logd, kernel=cfg.rbf_kernel, shape=cfg.rbf_shape, box=box)
    return eval_rbf(s, table[fine])


def run_apodg_ei(fom: FullOrderSystem, sets: TrainingSets, cfg: GreedyConfig) -> GreedyResult:
    """Greedy loop with the error estimate evaluated on every training sample."""
    table = np.asarray(sets.train, dtype=float)
    if table.size == 0:
        raise InvalidArgumentError("training set is empty")
    return _greedy(fom, table, np.arange(len(table)), np.zeros(0, dtype=np.int64), cfg, sets.names,
                   adaptive=False)


def run_apodg_ei_adapt(fom: FullOrderSystem, sets: TrainingSets, cfg: GreedyConfig) -> GreedyResult:
    """Greedy loop on an adaptively grown coarse set with a surrogate on the fine set."""
    coarse = np.asarray(sets.coarse, dtype=float)
    fine = np.zeros((0, coarse.shape[1])) if sets.fine is None else np.asarray(sets.fine, dtype=float)
    if coarse.size == 0:
        raise InvalidArgumentError("coarse training set is empty")
    table = np.vstack([coarse, fine])
    return _greedy(fom, table, np.arange(len(coarse)), len(coarse) + np.arange(len(fine)), cfg, sets.names,
                   adaptive=True)
