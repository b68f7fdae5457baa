"""Gate-referred charge noise: projection, filtered variance, envelopes, insensitivity.

Units: voltages in mV, time in ns, angular frequency in rad/ns, J in GHz.
Spectral densities are two-sided in the convention
``S(w) = ∫ <v(t) v(0)> cos(w t) dt`` (mV^2 ns).  The averaging time of a
:class:`NoiseModel` is given in seconds and converted internally.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, QuadratureError

__all__ = [
    "NoiseModel",
    "GateCorrelation",
    "FieldGrid",
    "project_noise_to_gates",
    "filtered_variance",
    "sigma_v_effective",
    "sigma_v_profile",
    "insensitivity",
    "generalized_insensitivity",
    "charge_envelope",
    "charge_decay_time",
    "envelope_from_spectrum",
    "hyperfine_envelope",
    "gaussian_hyperfine",
    "square_pulse_filter",
    "amplitude_for_decay_time",
]

NS_PER_S = 1e9


def square_pulse_filter(z):
    return np.sin(np.asarray(z) / 2.0) ** 2


@dataclass(frozen=True)
class NoiseModel:
    """Stationary gate-voltage noise.

    ``kind="one_over_f"``: ``S_V(w) = amplitude^2 / w`` with amplitude in mV.
    ``kind="white"``: ``S_V(w) = white_level`` given in mV^2 s.
    """

    amplitude: float = 0.3
    kind: str = "one_over_f"
    t_avg: float = 1.0  # s
    white_level: float | None = None  # mV^2 s
    filter: str = "square_pulse"

    def __post_init__(self):
        if self.kind not in ("one_over_f", "white"):
            raise DomainError(f"unknown noise kind {self.kind!r}")
        if self.filter != "square_pulse":
            raise DomainError(f"unsupported filter {self.filter!r}")
        if not self.t_avg > 0:
            raise DomainError("t_avg must be positive")
        if self.kind == "one_over_f" and not self.amplitude > 0:
            raise DomainError("amplitude must be positive")
        if self.kind == "white" and not (self.white_level and self.white_level > 0):
            raise DomainError("white noise needs a positive white_level")

    @property
    def t_avg_ns(self) -> float:
        return self.t_avg * NS_PER_S

    def spectrum(self, w):
        """S_V at angular frequency ``w`` (rad/ns), in mV^2 ns."""
        w = np.asarray(w, float)
        if self.kind == "white":
            return np.full_like(w, self.white_level * NS_PER_S)
        return self.amplitude**2 / w

    def scaled(self, factor: float) -> "NoiseModel":
        if self.kind == "white":
            return NoiseModel(self.amplitude, "white", self.t_avg, self.white_level * factor**2)
        return NoiseModel(self.amplitude * factor, self.kind, self.t_avg)


class GateCorrelation:
    """Dimensionless gate-to-gate correlation matrix ``C_jk``.

    The diagonal weighting ``C = diag(A_j^2)`` is the common case; a full
    symmetric positive semi-definite matrix is also accepted.
    """

    def __init__(self, matrix):
        c = np.asarray(matrix, float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DomainError("correlation matrix must be square")
        if not np.allclose(c, c.T, atol=1e-12):
            raise DomainError("correlation matrix must be symmetric")
        if np.linalg.eigvalsh(c).min() < -1e-10 * max(1.0, np.abs(c).max()):
            raise DomainError("correlation matrix must be positive semi-definite")
        self.matrix = c

    @classmethod
    def identity(cls, n: int) -> "GateCorrelation":
        return cls(np.eye(n))

    @classmethod
    def from_weights(cls, weights) -> "GateCorrelation":
        w = np.asarray(weights, float)
        if np.any(w < 0):
            raise DomainError("weights must be non-negative")
        return cls(np.diag(w**2))

    @classmethod
    def geometric(cls, gates, plunger_weight: float = 0.25, plunger_prefix: str = "P") -> "GateCorrelation":
        """Plunger gates weighted by ``plunger_weight``, all other gates by 1."""
        return cls.from_weights([plunger_weight if g.startswith(plunger_prefix) else 1.0 for g in gates])

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def normalized(self) -> "GateCorrelation":
        """Rescaled so that the trace equals the number of gates."""
        return GateCorrelation(self.matrix * self.n / np.trace(self.matrix))

    def sqrt(self) -> np.ndarray:
        """Symmetric square root ``L`` with ``L @ L.T == C``."""
        vals, vecs = np.linalg.eigh(self.matrix)
        return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T

    def quadratic(self, g) -> float:
        g = np.asarray(g, float)
        return float(g @ self.matrix @ g)


@dataclass
class FieldGrid:
    """Gate responses ``g_j(r)`` and a noise potential sampled on one set of cells."""

    responses: np.ndarray  # (n_gates, n_cells)
    noise: np.ndarray  # (n_cells,)
    volumes: np.ndarray | None = None
    positions: np.ndarray | None = None

    def __post_init__(self):
        self.responses = np.atleast_2d(np.asarray(self.responses, float))
        self.noise = np.asarray(self.noise, float)
        n_gates, n_cells = self.responses.shape
        if n_cells == 0:
            raise DomainError("field grid is empty")
        if self.noise.shape != (n_cells,):
            raise DomainError("noise field must be sampled on the same cells as the responses")
        self.volumes = np.ones(n_cells) if self.volumes is None else np.asarray(self.volumes, float)
        if self.volumes.shape != (n_cells,) or np.any(self.volumes < 0):
            raise DomainError("volumes must be non-negative, one per cell")
        if n_cells < n_gates:
            raise DomainError("need at least as many cells as gates")


def project_noise_to_gates(f: FieldGrid) -> np.ndarray:
    """Gate-referred noise vector from the volume-weighted pseudoinverse.

    Solves ``M v = b`` with ``M_jk = Σ g_j g_k vol`` and ``b_j = Σ δφ g_j vol``;
    for a rank-deficient ``M`` the minimum-norm solution is returned.
    """
    gw = f.responses * f.volumes
    m = gw @ f.responses.T
    b = gw @ f.noise
    v, *_ = np.linalg.lstsq(m, b, rcond=None)
    return v


def _integrate_log(fun, lo, hi, epsrel):
    """∫_lo^hi fun(z) dz using quadrature in ln z over per-decade panels."""
    total, err = 0.0, 0.0
    edges = np.exp(np.linspace(math.log(lo), math.log(hi),
                               max(2, int(math.ceil(math.log10(hi / lo))) + 1)))
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(lambda u: fun(math.exp(u)) * math.exp(u), math.log(a), math.log(b),
                                epsabs=0.0, epsrel=epsrel * 0.1, limit=200)
        total += val
        err += e
    return total, err


def filtered_variance(spectrum: Callable, t: float, t_low: float, epsrel: float = 1e-6) -> float:
    """``(2/pi) ∫_{1/t_low}^∞ dw S(w) sin^2(w t / 2) / w^2`` for a square pulse of length ``t``.

    In the scaled variable ``z = w t`` the low-frequency part (``z < 2pi``) is
    integrated on a logarithmic grid; the oscillatory remainder uses a
    Fourier-weighted rule out to infinity, so no upper truncation is needed.
    Raises :class:`QuadratureError` if the error estimate exceeds ``epsrel``.
    """
    if not t > 0:
        raise DomainError("pulse time must be positive")
    z_lo = t / t_low
    z_mid = 2.0 * math.pi

    def g(z):
        # S(w) / w^2 expressed in z, times the Jacobian 1/t  -> multiplied by t^2 / t below
        return float(spectrum(z / t)) / (z * z)

    parts, errs = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if z_lo < z_mid:
                v, e = _integrate_log(lambda z: g(z) * math.sin(z / 2) ** 2, z_lo, z_mid, epsrel)
                parts.append(v)
                errs.append(e)
                start = z_mid
            else:
                start = z_lo
            # sin^2(z/2) = (1 - cos z) / 2
            smooth, e1 = integrate.quad(g, start, np.inf, epsabs=0.0, epsrel=epsrel * 0.1, limit=200)
            # the Fourier rule only honours an absolute tolerance
            tol = 0.1 * epsrel * (abs(smooth) + sum(parts))
            osc, e2 = integrate.quad(g, start, np.inf, weight="cos", wvar=1.0, limlst=200, epsabs=tol)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"filtered-variance quadrature failed: {exc}") from None
    parts.append(0.5 * (smooth - osc))
    errs.append(0.5 * (e1 + e2))
    total, err = sum(parts), sum(errs)
    if not total > 0 or err > epsrel * total:
        raise QuadratureError(f"quadrature error {err:.3g} exceeds tolerance for value {total:.3g}")
    # ∫ dw S(w) sin^2/w^2 = t * ∫ dz g(z) sin^2(z/2)
    return 2.0 / math.pi * t * total


def sigma_v_effective(n: NoiseModel, t, epsrel: float = 1e-6):
    """Effective RMS gate voltage (mV) seen by a square exchange pulse of length ``t`` ns."""
    ts = np.atleast_1d(np.asarray(t, float))
    out = np.array([_sigma_cached(n, float(ti), epsrel) for ti in ts])
    return out if np.ndim(t) else float(out[0])


@lru_cache(maxsize=4096)
def _sigma_cached(n: NoiseModel, t: float, epsrel: float) -> float:
    # scans evaluate the same pulse times many times; NoiseModel is frozen and hashable
    return math.sqrt(filtered_variance(n.spectrum, t, n.t_avg_ns, epsrel)) / t


def sigma_v_profile(n: NoiseModel, times, nodes: int = 48) -> np.ndarray:
    """``sigma_v_effective`` over many pulse times via interpolation in ``ln t``.

    Zero or negative times map to 0 (they only appear where the envelope is 1).
    """
    times = np.asarray(times, float)
    out = np.zeros_like(times)
    pos = times > 0
    if not pos.any():
        return out
    lo, hi = times[pos].min(), times[pos].max()
    if hi / lo < 1.0001:
        out[pos] = sigma_v_effective(n, lo)
        return out
    grid = np.exp(np.linspace(math.log(lo), math.log(hi), nodes))
    var = np.array([sigma_v_effective(n, g) ** 2 for g in grid])
    out[pos] = np.sqrt(PchipInterpolator(np.log(grid), var)(np.log(times[pos])))
    return out


def insensitivity(j: float, grad) -> float:
    """``J / |grad J|`` in mV; ``inf`` when the gradient vanishes."""
    norm = float(np.linalg.norm(np.asarray(grad, float)))
    if norm == 0.0:
        return math.inf
    return float(j) / norm


def generalized_insensitivity(j: float, grad, c: GateCorrelation) -> float:
    """``J / sqrt(grad . C . grad)``; ``inf`` when the gradient lies in the null space of C."""
    q = c.quadratic(grad)
    if q <= 0.0:
        return math.inf
    return float(j) / math.sqrt(q)


def charge_envelope(j, i, sigma_v, t):
    """Gaussian charge-noise envelope ``exp[-(2 pi J t)^2 (sigma_V / I)^2]``."""
    x = 2.0 * np.pi * np.asarray(j) * np.asarray(t) * np.asarray(sigma_v) / np.asarray(i)
    return np.exp(-x * x)


def charge_decay_time(j: float, i: float, n: NoiseModel, t_guess: float | None = None,
                      iterations: int = 30) -> float:
    """1/e time of :func:`charge_envelope`, solved self-consistently with ``sigma_V(t)``."""
    if math.isinf(i):
        return math.inf
    t = t_guess or 100.0 / j
    for _ in range(iterations):
        t_new = i / (2.0 * math.pi * j * sigma_v_effective(n, t))
        if abs(t_new - t) < 1e-10 * t:
            return t_new
        t = t_new
    return t


def envelope_from_spectrum(s_j: Callable, t, t_avg_ns: float, epsrel: float = 1e-6):
    """Envelope ``exp[-(2 pi)^2 (2/pi) ∫ dw S_J(w) F(w t)/w^2]`` for a J-noise spectrum.

    ``s_j`` maps angular frequency (rad/ns) to GHz^2 ns.  Times ``<= 0`` give 1.
    """
    ts = np.atleast_1d(np.asarray(t, float))
    out = np.ones_like(ts)
    probe = float(s_j(1.0))
    if probe == 0.0:
        return out if np.ndim(t) else 1.0
    for k, ti in enumerate(ts):
        if ti > 0:
            out[k] = math.exp(-(2.0 * math.pi) ** 2 * filtered_variance(s_j, ti, t_avg_ns, epsrel))
    return out if np.ndim(t) else float(out[0])


def gaussian_hyperfine(t, t_hf: float):
    return np.exp(-(np.asarray(t, float) / t_hf) ** 2)


def hyperfine_envelope(t, t_hf: float | None, shape: Callable = gaussian_hyperfine):
    """Quasi-static magnetic dephasing envelope with 1/e time ``t_hf`` (ns).

    ``t_hf=None`` disables the channel.  ``shape`` may be replaced by any
    callable ``(t, t_hf) -> envelope``.
    """
    if t_hf is None or math.isinf(t_hf):
        return np.ones_like(np.asarray(t, float))
    if not t_hf > 0:
        raise DomainError("t_hf must be positive")
    return shape(t, t_hf)


def amplitude_for_decay_time(j: float, i: float, tau: float, n: NoiseModel) -> float:
    """1/f amplitude giving a charge-noise 1/e time ``tau`` at exchange ``j`` and insensitivity ``i``."""
    unit = NoiseModel(1.0, n.kind, n.t_avg)
    return i / (2.0 * math.pi * j * tau * sigma_v_effective(unit, tau))
