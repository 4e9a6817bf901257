"""Full-order monodomain model and its first-order IMEX time march.

State layout: ``x = [Phi; r]`` with the potential in mV and the recovery
variable dimensionless.  One step solves

    EE x^k = AA x^{k-1} + dt (M_f f(x^{k-1}) + B i_s^k)

with ``EE = E - dt A``, ``AA = E``, ``E = diag(M, beta_t M)``,
``A = diag(S, 0)`` and ``M_f = diag(M, M)``.  The reaction is explicit, the
diffusion implicit.  ``EE`` does not depend on the free parameters, so a
single sparse LU factorization is shared by every solve.

``B`` has one column per stimulus site (the load vector restricted to the
node set) and ``i_s^k`` is the matching vector of amplitudes at step ``k``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledOperators
from .errors import DivergenceError, FactorizationError, InvalidArgumentError, ValidationError
from .reaction import APParameters, eval_reaction, to_dimensionless

__all__ = [
    "StimulusProtocol",
    "FullOrderSystem",
    "Trajectory",
    "build_fom",
    "imex_step",
    "solve_fom",
    "write_trajectory_csv",
    "sustained_activity",
]

PROTOCOL_KINDS = ("none", "initial-condition-planar", "s1s2-scroll")


@dataclass(frozen=True)
class StimulusProtocol:
    """Initial condition and external stimulus schedule.

    ``initial-condition-planar`` excites ``planar_set`` through the initial
    potential and applies no current.  ``s1s2-scroll`` starts at rest and
    applies amplitude ``amplitude`` on ``s1_set`` for steps with
    ``0 < t <= s1_window`` and on ``s2_set`` for ``t_s < t <= t_s + s2_duration``.
    """

    kind: str = "initial-condition-planar"
    amplitude: float = 10.0
    s1_window: float = 10.0
    s2_duration: float = 20.0
    s1_set: str = "left_edge"
    s2_set: str = "s2_region"
    planar_set: str = "left_edge"
    excited_potential: float = -10.0
    rest_potential: float = -80.0

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise InvalidArgumentError(f"unknown protocol kind {self.kind!r}; expected one of {PROTOCOL_KINDS}")
        if self.s1_window < 0 or self.s2_duration < 0:
            raise InvalidArgumentError("stimulus windows must be non-negative")

    def required_sets(self):
        if self.kind == "initial-condition-planar":
            return (self.planar_set,)
        if self.kind == "s1s2-scroll":
            return (self.s1_set, self.s2_set)
        return ()

    def signal(self, times, t_s):
        """Stimulus amplitudes, shape ``(len(times), n_inputs)``."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        # small slack so that windows aligned with the time grid are exact
        eps = 1e-9 * max(1.0, float(np.max(np.abs(t)))) if t.size else 0.0
        if self.kind == "s1s2-scroll":
            s1 = (t > eps) & (t <= self.s1_window + eps)
            s2 = (t > t_s + eps) & (t <= t_s + self.s2_duration + eps)
            return self.amplitude * np.column_stack([s1, s2]).astype(float)
        return np.zeros((t.size, 1))


@dataclass
class FullOrderSystem:
    """Discretized coupled system with a reusable factorization of ``EE``."""

    ops: AssembledOperators
    params: APParameters
    dt: float
    n_steps: int
    protocol: StimulusProtocol
    E: sp.csr_matrix
    A: sp.csr_matrix
    EE: sp.csc_matrix
    Mf: sp.csr_matrix
    B: np.ndarray
    C: np.ndarray
    lu: object = field(repr=False, default=None)

    @property
    def N(self) -> int:
        return self.ops.dimension

    @property
    def AA(self):
        return self.E

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def initial_state(self, params=None) -> np.ndarray:
        N = self.N
        pr = self.protocol
        x0 = np.zeros(2 * N)
        x0[:N] = pr.rest_potential
        if pr.kind == "initial-condition-planar":
            x0[np.asarray(self.ops.node_sets[pr.planar_set], dtype=int)] = pr.excited_potential
        return x0

    def inputs(self, params: APParameters) -> np.ndarray:
        """Stimulus amplitudes for steps ``k = 0..n_steps`` (row 0 unused)."""
        return self.protocol.signal(self.times, params.t_s)

    def nonlinearity(self, x, params: APParameters) -> np.ndarray:
        """Nodal reaction ``f(x)`` stacked as ``[f_phi; f_r]`` (works on 2N x m arrays)."""
        N = self.N
        phi = to_dimensionless(x[:N], params)
        f_phi, f_r = eval_reaction(phi, x[N:], params)
        return np.concatenate([f_phi, f_r], axis=0)

    def solve_linear(self, rhs):
        return self.lu.solve(rhs)


@dataclass
class Trajectory:
    """Time series of one solve.

    ``states`` is ``(dim, n_steps + 1)``; ``nonlinear`` holds
    ``f(x^{k-1})`` for ``k = 1..n_steps`` as columns, when recorded.
    """

    times: np.ndarray
    outputs: np.ndarray
    parameter: np.ndarray
    states: np.ndarray | None = None
    nonlinear: np.ndarray | None = None
    wall_time: float = 0.0


def build_fom(ops: AssembledOperators, params: APParameters, dt, n_steps, protocol=None) -> FullOrderSystem:
    """Assemble the block operators and factorize ``EE`` once."""
    if not dt > 0:
        raise InvalidArgumentError(f"time step must be positive, got {dt}")
    if int(n_steps) != n_steps or n_steps < 0:
        raise InvalidArgumentError(f"step count must be a non-negative integer, got {n_steps}")
    protocol = protocol or StimulusProtocol()
    for name in protocol.required_sets():
        if name not in ops.node_sets:
            raise ValidationError(f"protocol references unknown node set {name!r}")

    N = ops.dimension
    M = ops.mass.tocsr()
    Z = sp.csr_matrix((N, N))
    E = sp.block_diag([M, params.beta_t * M], format="csr")
    A = sp.bmat([[ops.stiffness, None], [None, Z]], format="csr")
    Mf = sp.block_diag([M, M], format="csr")
    EE = (E - dt * A).tocsc()

    if protocol.kind == "s1s2-scroll":
        cols = []
        for name in (protocol.s1_set, protocol.s2_set):
            mask = np.zeros(N)
            mask[np.asarray(ops.node_sets[name], dtype=int)] = 1.0
            cols.append(np.concatenate([ops.load * mask, np.zeros(N)]))
        B = np.column_stack(cols)
    else:
        B = np.concatenate([ops.load, np.zeros(N)])[:, None]
    C = np.concatenate([ops.flux, np.zeros(N)])

    try:
        lu = spla.splu(EE)
    except RuntimeError as exc:
        raise FactorizationError(f"EE = E - dt A is singular: {exc}") from exc
    return FullOrderSystem(
        ops=ops, params=params, dt=float(dt), n_steps=int(n_steps), protocol=protocol,
        E=E, A=A, EE=EE, Mf=Mf, B=B, C=C, lu=lu,
    )


def imex_step(sys: FullOrderSystem, x_prev, k, params: APParameters, inputs=None) -> np.ndarray:
    """One IMEX step from ``x^{k-1}`` to ``x^k``."""
    if inputs is None:
        inputs = sys.protocol.signal([k * sys.dt], params.t_s)[0]
    f = sys.nonlinearity(x_prev, params)
    rhs = sys.E @ x_prev + sys.dt * (sys.Mf @ f + sys.B @ inputs)
    x = sys.solve_linear(rhs)
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite state at step {k}", step=k)
    return x


def solve_fom(sys: FullOrderSystem, params=None, store_states=True, store_nonlinear=True) -> Trajectory:
    """March the full model over ``n_steps`` steps.

    Returns outputs ``y^k = C x^k`` for every step, together with the
    states and the nonlinear snapshots ``f(x^{k-1})`` when requested.
    """
    import time

    params = params or sys.params
    t0 = time.perf_counter()
    n = sys.n_steps
    x = sys.initial_state(params)
    inputs = sys.inputs(params)
    y = np.empty(n + 1)
    y[0] = sys.C @ x
    X = np.empty((x.size, n + 1)) if store_states else None
    F = np.empty((x.size, n)) if store_nonlinear else None
    if store_states:
        X[:, 0] = x
    E, Mf, B, dt = sys.E, sys.Mf, sys.B, sys.dt
    for k in range(1, n + 1):
        f = sys.nonlinearity(x, params)
        rhs = E @ x + dt * (Mf @ f + B @ inputs[k])
        x = sys.solve_linear(rhs)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at step {k}", step=k)
        y[k] = sys.C @ x
        if store_states:
            X[:, k] = x
        if store_nonlinear:
            F[:, k - 1] = f
    p = np.array([params.gamma, params.t_s]) if sys.protocol.kind == "s1s2-scroll" else np.array([params.gamma])
    return Trajectory(
        times=sys.times.copy(), outputs=y, parameter=p, states=X, nonlinear=F,
        wall_time=time.perf_counter() - t0,
    )


def write_trajectory_csv(path, traj: Trajectory):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y"])
        for t, y in zip(traj.times, traj.outputs):
            w.writerow([repr(float(t)), repr(float(y))])


def sustained_activity(Phi, times, threshold=-40.0, window=100.0) -> bool:
    """True when some node exceeds ``threshold`` mV during the last ``window`` ms.

    ``Phi`` is the ``(N, n_steps + 1)`` potential history.  A reentrant wave
    keeps tissue excited until the end of the run, while a single passing
    wave leaves it at rest.
    """
    Phi = np.asarray(Phi, dtype=float)
    times = np.asarray(times, dtype=float)
    if Phi.ndim != 2 or Phi.shape[1] != times.size:
        raise InvalidArgumentError(f"potential history {Phi.shape} does not match {times.size} time points")
    if times.size == 0:
        return False
    late = times >= times[-1] - window
    return bool(np.any(Phi[:, late] > threshold))
