"""Two-site, two-electron Hubbard model of a double quantum dot.

Energies are frequencies (E/h) in GHz.  The singlet sector is spanned by
``(2,0)S, (1,1)S, (0,2)S``; the (1,1) triplet is uncoupled and sits at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "DotPairParams",
    "SingletSpectrum",
    "singlet_hamiltonian",
    "singlet_spectrum",
    "exchange_exact",
    "exchange_exact_array",
    "exchange_detuning_approx",
    "exchange_sop_approx",
    "exchange_excited_corrected",
    "dj_ddelta",
    "dj_dtc",
]


@dataclass(frozen=True)
class DotPairParams:
    """Hubbard parameters of one dot pair.

    ``u_t`` and ``tc_t`` describe the excited triplet anti-crossing and
    default to the singlet values.
    """

    u_s: float
    tc_s: float
    delta: float = 0.0
    u_t: float | None = None
    tc_t: float | None = None

    def __post_init__(self):
        if not self.u_s > 0:
            raise DomainError(f"charging energy must be positive, got u_s={self.u_s}")
        if self.tc_s < 0:
            raise DomainError(f"tunnel coupling must be non-negative, got tc_s={self.tc_s}")
        if self.u_t is not None and self.u_t < self.u_s:
            raise DomainError(f"u_t={self.u_t} must not be below u_s={self.u_s}")
        if self.tc_t is not None and self.tc_t < 0:
            raise DomainError(f"tunnel coupling must be non-negative, got tc_t={self.tc_t}")

    @property
    def u_triplet(self) -> float:
        return self.u_s if self.u_t is None else self.u_t

    @property
    def tc_triplet(self) -> float:
        return self.tc_s if self.tc_t is None else self.tc_t

    def with_delta(self, delta: float) -> "DotPairParams":
        return DotPairParams(self.u_s, self.tc_s, delta, self.u_t, self.tc_t)

    def with_tc(self, tc: float) -> "DotPairParams":
        return DotPairParams(self.u_s, tc, self.delta, self.u_t, self.tc_t)


@dataclass(frozen=True)
class SingletSpectrum:
    energies: np.ndarray
    triplet_energy: float = 0.0
    states: tuple = field(default=("(2,0)S", "(1,1)S", "(0,2)S"), repr=False)

    @property
    def ground(self) -> float:
        return float(self.energies[0])

    @property
    def exchange(self) -> float:
        return self.triplet_energy - self.ground


def singlet_hamiltonian(p: DotPairParams) -> np.ndarray:
    """3x3 singlet-sector Hamiltonian in the basis (2,0)S, (1,1)S, (0,2)S.

    The hopping matrix element between (1,1)S and each doubly occupied state
    is ``tc_s``; the two doubly occupied states are not directly coupled.
    """
    u, t, d = p.u_s, p.tc_s, p.delta
    return np.array(
        [
            [u + d, t, 0.0],
            [t, 0.0, t],
            [0.0, t, u - d],
        ]
    )


def _secular(e, u, tc, delta):
    # det(H - e) multiplied by -1, written so it is exactly even in delta
    w = u - e
    f = e * (w * w - delta * delta) + 2.0 * tc * tc * w
    df = (w * w - delta * delta) - 2.0 * e * w - 2.0 * tc * tc
    return f, df


def _ground_energy(u, tc, delta):
    """Lowest singlet eigenvalue, vectorised over broadcastable inputs.

    A LAPACK eigensolve supplies the starting point; Newton steps on the
    secular polynomial restore full relative accuracy of the small ground
    energy when ``tc`` is much smaller than ``u``.
    """
    u, tc, delta = np.broadcast_arrays(
        np.asarray(u, float), np.asarray(tc, float), np.asarray(delta, float)
    )
    shape = u.shape
    u, tc, delta = u.ravel(), tc.ravel(), delta.ravel()
    h = np.zeros((u.size, 3, 3))
    h[:, 0, 0] = u + delta
    h[:, 2, 2] = u - delta
    h[:, 0, 1] = h[:, 1, 0] = tc
    h[:, 1, 2] = h[:, 2, 1] = tc
    e = np.linalg.eigvalsh(h)[:, 0]
    scale = np.abs(u) + np.abs(delta) + np.abs(tc)
    for _ in range(3):
        f, df = _secular(e, u, tc, delta)
        ok = df != 0
        step = np.where(ok, f / np.where(ok, df, 1.0), 0.0)
        # near-degenerate roots: keep the eigensolver value
        step = np.where(np.abs(step) < 1e-8 * scale, step, 0.0)
        e = e - step
    return e.reshape(shape)


def singlet_spectrum(p: DotPairParams) -> SingletSpectrum:
    energies = np.linalg.eigvalsh(singlet_hamiltonian(p))
    energies[0] = _ground_energy(p.u_s, p.tc_s, p.delta)
    return SingletSpectrum(energies=np.sort(energies))


def exchange_exact_array(u, tc, delta) -> np.ndarray:
    """Vectorised exact exchange ``J = -E_ground`` (GHz)."""
    return -_ground_energy(u, tc, delta)


def exchange_exact(p: DotPairParams) -> float:
    """Singlet-triplet splitting from the 3x3 eigensolve (triplet at 0)."""
    return float(exchange_exact_array(p.u_s, p.tc_s, p.delta))


def exchange_detuning_approx(p: DotPairParams) -> float:
    """Two-level result near one anti-crossing; only the near (|Δ|-side) level is kept."""
    x = p.u_s - abs(p.delta)
    t2 = p.tc_s**2
    # sqrt(t^2 + x^2/4) - x/2, rationalised against cancellation
    root = np.sqrt(t2 + x * x / 4.0)
    if x >= 0:
        return float(t2 / (root + x / 2.0)) if t2 > 0 else 0.0
    return float(root - x / 2.0)


def exchange_sop_approx(p: DotPairParams) -> float:
    """Exchange near the symmetric operating point; exact at Δ = 0."""
    u, d, t = p.u_s, p.delta, p.tc_s
    if abs(d) >= u:
        raise DomainError(f"|delta|={abs(d)} must be below U={u} for the SOP formula")
    gap = 2.0 * t * t / (np.sqrt(2.0 * t * t + u * u / 4.0) + u / 2.0)
    return float(gap / (1.0 - (d / u) ** 2))


def exchange_excited_corrected(p: DotPairParams) -> float:
    """Δ = 0 exchange with the excited triplet anti-crossing subtracted."""
    return p.tc_s**2 / p.u_s - p.tc_triplet**2 / p.u_triplet


def dj_ddelta(p: DotPairParams) -> float:
    """Central finite-difference ∂J/∂Δ of the exact exchange (dimensionless)."""
    h = max(1e-6 * p.u_s, 1e-9)
    e = _ground_energy(p.u_s, p.tc_s, np.array([p.delta + h, p.delta - h]))
    # J = -E
    return float(-(e[0] - e[1]) / (2.0 * h))


def dj_dtc(p: DotPairParams) -> float:
    h = max(1e-6 * max(p.tc_s, 1e-3), 1e-10)
    lo = max(p.tc_s - h, 0.0)
    hi = p.tc_s + h
    e = _ground_energy(p.u_s, np.array([hi, lo]), p.delta)
    return float(-(e[0] - e[1]) / (hi - lo))
