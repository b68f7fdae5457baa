"""Shallow-barrier (modified WKB) tunnel coupling and its fit to J(V) data.

The tunnelling action is taken linear in the effective barrier voltage,
``phi = a - b*V``, and the coupling is

    t_c = t0 * (sqrt(exp(2 phi) + 1) - exp(phi))

which reduces to ``t0 * exp(-phi) / 2`` for a high barrier and saturates at
``t0`` when the barrier disappears.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import DomainError

__all__ = ["WkbBarrier", "WkbFit", "tc_of_voltage", "tc_of_action", "fit_wkb", "sop_exchange"]

_PHI_OVERFLOW = 350.0


@dataclass(frozen=True)
class WkbBarrier:
    t0: float  # GHz
    a: float
    b: float  # 1/mV

    def __post_init__(self):
        if not self.t0 > 0:
            raise DomainError(f"t0 must be positive, got {self.t0}")
        if not self.b > 0:
            raise DomainError(f"b must be positive, got {self.b}")

    def action(self, v):
        return self.a - self.b * np.asarray(v, float)

    def voltage_for_action(self, phi: float) -> float:
        return (self.a - phi) / self.b


def tc_of_action(phi, t0: float = 1.0):
    """Coupling as a function of the tunnelling action (vectorised)."""
    phi = np.asarray(phi, float)
    out = np.empty_like(phi)
    big = phi > _PHI_OVERFLOW
    # series limit: sqrt(e^2p + 1) - e^p = e^-p / 2 + O(e^-3p)
    out[big] = 0.5 * np.exp(-phi[big])
    small = ~big
    ep = np.exp(phi[small])
    # rationalised form of sqrt(e^2p + 1) - e^p, stable for large phi
    out[small] = 1.0 / (np.sqrt(ep * ep + 1.0) + ep)
    out *= t0
    return out if out.ndim else float(out)


def tc_of_voltage(w: WkbBarrier, v):
    """Tunnel coupling (GHz) at effective barrier voltage ``v`` (mV)."""
    return tc_of_action(w.action(v), w.t0)


def sop_exchange(tc, u: float):
    """Exchange at Δ = 0, ``sqrt(2 tc^2 + U^2/4) - U/2`` in stable form."""
    tc = np.asarray(tc, float)
    return 2.0 * tc * tc / (np.sqrt(2.0 * tc * tc + u * u / 4.0) + u / 2.0)


@dataclass(frozen=True)
class WkbFit:
    barrier: WkbBarrier
    residual: float  # sum of squared log residuals
    converged: bool
    n_iter: int
    n_points: int
    message: str = ""


def fit_wkb(data, u: float, init: WkbBarrier, j_min: float | None = None,
            max_iter: int = 500, xtol: float = 1e-8) -> WkbFit:
    """Fit ``(t0, a, b)`` to symmetric-point exchange data.

    Parameters
    ----------
    data:
        Sequence of ``(V, J)`` pairs with V in mV and J in GHz, all taken at
        Δ = 0.
    u:
        Charging energy (GHz) used to convert t_c to J.
    init:
        Starting point of the local search.
    j_min:
        Optional threshold; points with ``J < j_min`` are ignored, which
        restricts the fit to the high-J regime where the model applies.

    Returns
    -------
    WkbFit
        Best parameters found.  ``converged`` is False when the iteration
        budget ran out; the best-so-far parameters are still returned.
    """
    arr = np.asarray(data, float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError("data must be a sequence of (V, J) pairs")
    if j_min is not None:
        arr = arr[arr[:, 1] >= j_min]
    if len(arr) < 4:
        raise DomainError(f"need at least 4 data points, got {len(arr)}")
    v, j = arr[:, 0], arr[:, 1]
    if np.any(j <= 0):
        raise DomainError("exchange values must be positive")
    if np.ptp(v) == 0:
        raise DomainError("degenerate data: all voltages are equal")
    log_j = np.log(j)

    def residuals(x):
        t0, a, b = np.exp(x[0]), x[1], np.exp(x[2])
        tc = tc_of_action(a - b * v, t0)
        return np.log(sop_exchange(tc, u)) - log_j

    x0 = np.array([np.log(init.t0), init.a, np.log(init.b)])
    sol = least_squares(residuals, x0, method="lm", xtol=xtol, ftol=1e-15, gtol=1e-15,
                        max_nfev=max_iter)
    best = WkbBarrier(t0=float(np.exp(sol.x[0])), a=float(sol.x[1]), b=float(np.exp(sol.x[2])))
    return WkbFit(
        barrier=best,
        residual=float(np.sum(sol.fun**2)),
        converged=bool(sol.status > 0),
        n_iter=int(sol.nfev),
        n_points=len(arr),
        message=str(sol.message),
    )
