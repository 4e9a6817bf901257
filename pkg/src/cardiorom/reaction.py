"""Aliev-Panfilov reaction terms and unit transforms.

The reaction is evaluated at nodal values (ionic current interpolation);
the caller multiplies the result with the mass matrix.

Offset convention: the dimensionless potential is
``phi = (Phi - delta_phi) / beta_phi`` with ``delta_phi = -80 mV`` stored
as tabulated, so that the resting potential -80 mV maps to 0 and the
peak +20 mV maps to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError, SingularityError

__all__ = ["APParameters", "to_dimensionless", "to_physical", "eval_reaction"]


@dataclass(frozen=True)
class APParameters:
    """Model constants; ``gamma`` and ``t_s`` are the free parameters."""

    beta_t: float = 12.9  # ms
    beta_phi: float = 100.0  # mV
    delta_phi: float = -80.0  # mV
    c: float = 8.0
    alpha: float = 0.01
    b: float = 0.15
    mu1: float = 0.2
    mu2: float = 0.3
    gamma: float = 0.002
    t_s: float = 0.0  # ms, start of the second stimulus

    def __post_init__(self):
        if not self.beta_t > 0 or not self.beta_phi > 0 or not self.mu2 > 0:
            raise InvalidArgumentError("beta_t, beta_phi and mu2 must be positive")

    def with_parameter(self, p):
        """Copy with free parameters set from a scalar ``gamma`` or ``(gamma, t_s)``."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.size == 1:
            return replace(self, gamma=float(p[0]))
        if p.size == 2:
            return replace(self, gamma=float(p[0]), t_s=float(p[1]))
        raise InvalidArgumentError(f"expected gamma or (gamma, t_s), got {p}")


def to_dimensionless(Phi, params: APParameters):
    return (np.asarray(Phi, dtype=float) - params.delta_phi) / params.beta_phi


def to_physical(phi, params: APParameters):
    return np.asarray(phi, dtype=float) * params.beta_phi + params.delta_phi


def eval_reaction(phi, r, params: APParameters):
    """Nodal reaction rates.

    Parameters
    ----------
    phi, r : array_like
        Dimensionless potential and recovery variable at the nodes.

    Returns
    -------
    f_phi : ndarray
        Potential rate in mV/ms, ``(beta_phi/beta_t) [c phi (phi-alpha)(1-phi) - r phi]``.
    f_r : ndarray
        ``[gamma + mu1 r / (mu2 + phi)] [-r - c phi (phi - b - 1)]``; the
        recovery equation carries the ``beta_t`` factor on its mass block.
    """
    phi = np.asarray(phi, dtype=float)
    r = np.asarray(r, dtype=float)
    if phi.shape != r.shape:
        raise InvalidArgumentError(f"phi {phi.shape} and r {r.shape} differ in shape")
    p = params
    denom = p.mu2 + phi
    zero = np.flatnonzero(denom == 0.0)
    if zero.size:
        raise SingularityError(f"mu2 + phi vanishes at node {zero[0]}", node=int(zero[0]))
    f_phi = (p.beta_phi / p.beta_t) * (p.c * phi * (phi - p.alpha) * (1.0 - phi) - r * phi)
    f_r = (p.gamma + p.mu1 * r / denom) * (-r - p.c * phi * (phi - p.b - 1.0))
    return f_phi, f_r
