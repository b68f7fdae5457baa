"""Time-trace analysis: damped-cosine fits, spectra and peak picking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .data import TimeTrace
from .errors import DomainError, FitError

__all__ = [
    "RabiFit",
    "Spectrum",
    "highpass",
    "fit_rabi",
    "fft_spectrum",
    "peak_frequencies",
    "count_fringes",
]


@dataclass
class RabiFit:
    frequency: float  # GHz
    decay_1e: float  # ns, 1/e time of the full envelope
    n_rabi: float
    residual: float  # RMS of the fit residual
    amplitude: float = 0.0
    phase: float = 0.0
    offset: float = 0.0
    decay_components: dict = field(default_factory=dict)


@dataclass
class Spectrum:
    frequencies: np.ndarray  # GHz
    magnitude: np.ndarray  # amplitude-normalised

    @property
    def bin_width(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])


def _require_uniform(trace: TimeTrace):
    if len(trace.times) < 4 or not trace.is_uniform():
        raise DomainError("trace needs a uniform time grid with at least 4 points")


def highpass(trace: TimeTrace, cutoff: float) -> TimeTrace:
    """Zero-phase high-pass: subtract a centred moving mean spanning ``1/cutoff`` ns."""
    _require_uniform(trace)
    if not cutoff > 0:
        raise DomainError("cutoff must be positive")
    width = max(1, int(round(1.0 / (cutoff * trace.dt))))
    width += 1 - width % 2
    background = ndimage.uniform_filter1d(trace.p_singlet, size=width, mode="nearest")
    meta = dict(trace.metadata, highpass_cutoff_ghz=cutoff)
    return TimeTrace(trace.times, trace.p_singlet - background + trace.p_singlet.mean(), meta)


def fft_spectrum(trace: TimeTrace, pad: int = 1) -> Spectrum:
    """One-sided Fourier magnitude after mean removal and a Hann taper.

    The magnitude is scaled so that a pure tone of amplitude ``a`` gives a
    peak of height ``a``.
    """
    _require_uniform(trace)
    y = trace.p_singlet - trace.p_singlet.mean()
    w = np.hanning(len(y))
    n = len(y) * max(1, int(pad))
    mag = np.abs(np.fft.rfft(y * w, n=n)) * 2.0 / w.sum()
    freqs = np.fft.rfftfreq(n, d=trace.dt)
    return Spectrum(freqs, mag)


def peak_frequencies(spec: Spectrum, n: int | None = None, floor: float = 1e-6,
                     rel_floor: float = 0.05) -> list[float]:
    """Interpolated frequencies of the ``n`` strongest local maxima.

    A maximum counts only if it exceeds both ``floor`` and ``rel_floor``
    times the largest bin.  The vertex of a parabola through the
    log-magnitudes of the peak bin and its neighbours gives the frequency.
    """
    m = spec.magnitude
    if len(m) < 3:
        return []
    level = max(floor, rel_floor * float(m.max()))
    idx = np.where((m[1:-1] > m[:-2]) & (m[1:-1] >= m[2:]) & (m[1:-1] > level))[0] + 1
    idx = idx[np.argsort(m[idx])[::-1]]
    if n is not None:
        idx = idx[:n]
    out = []
    for k in idx:
        a, b, c = np.log(m[k - 1:k + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        out.append(float(spec.frequencies[k] + shift * spec.bin_width))
    return out


def count_fringes(trace: TimeTrace, threshold: float) -> int:
    """Number of oscillation maxima rising more than ``threshold`` above the trace median."""
    p = trace.p_singlet
    base = float(np.median(p))
    peaks = np.where((p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:]))[0] + 1
    return int(np.sum(p[peaks] - base > threshold))


def _one_over_e(envelope, t_max):
    """Smallest t with envelope(t) = 1/e, extrapolating past the data if needed."""
    target = math.exp(-1.0)
    hi = t_max
    while envelope(hi) > target:
        hi *= 2.0
        if hi > 1e6 * t_max:
            return math.inf
    # envelopes may be undefined at exactly t = 0 (e.g. sigma_V(t))
    return float(optimize.brentq(lambda t: envelope(t) - target, 1e-9 * t_max, hi, xtol=1e-12 * hi))


def fit_rabi(trace: TimeTrace, highpass_cutoff: float | None = None, envelope: str = "gaussian",
             charge_variance=None, min_periods: float = 8.0, min_points_per_period: float = 8.0) -> RabiFit:
    """Least-squares fit of ``a cos(2 pi f t + phi) E(t) + c``.

    ``envelope`` selects ``E``:

    * ``"gaussian"``: ``exp[-(t/tau)^2]``.
    * ``"double"``: product of a Gaussian hyperfine channel and a charge
      channel ``exp[-k (t sigma_V(t))^2]``.  ``charge_variance`` must give
      ``(t sigma_V(t))^2`` on ``trace.times``; it carries the weak
      logarithmic time dependence that separates the two channels.  For a
      constant ``sigma_V`` the two channels are indistinguishable.

    Raises :class:`FitError` when no oscillation is present, the sampling is
    too coarse or too short, or the optimiser fails.
    """
    _require_uniform(trace)
    if highpass_cutoff is not None:
        trace = highpass(trace, highpass_cutoff)
    t, y = trace.times, trace.p_singlet
    span = float(t[-1] - t[0])

    spec = fft_spectrum(trace, pad=4)
    peaks = peak_frequencies(spec, 1, floor=1e-6 + 1e-3 * float(np.std(y)), rel_floor=0.0)
    peaks = [p for p in peaks if p > 1.0 / span]
    if not peaks or np.std(y) < 1e-9:
        raise FitError("no oscillation found in trace")
    f0 = peaks[0]
    if f0 * span < min_periods:
        raise FitError(f"insufficient sampling: {f0 * span:.1f} periods < {min_periods}")
    if 1.0 / (f0 * trace.dt) < min_points_per_period:
        raise FitError(f"insufficient sampling: {1.0 / (f0 * trace.dt):.1f} points per period")

    c0 = float(y.mean())
    # phase and amplitude by linear least squares at the FFT frequency
    basis = np.stack([np.cos(2 * np.pi * f0 * t), np.sin(2 * np.pi * f0 * t), np.ones_like(t)], 1)
    (ca, sa, _), *_ = np.linalg.lstsq(basis, y, rcond=None)
    a0, ph0 = float(np.hypot(ca, sa)), float(np.arctan2(-sa, ca))

    if envelope == "gaussian":
        def env(p, tt):
            return np.exp(-(p[0] * tt) ** 2)
        kappa_guesses = [[1.0 / s] for s in (span / 4, span, 4 * span)]
    elif envelope == "double":
        if charge_variance is None:
            raise DomainError("double envelope needs charge_variance on the trace times")
        cv = np.asarray(charge_variance, float)
        if cv.shape != t.shape:
            raise DomainError("charge_variance must match trace.times")
        cv_of = _interp_factory(t, cv)

        def env(p, tt):
            var = cv if tt is t else cv_of(tt)
            return np.exp(-(p[0] * tt) ** 2 - p[1] ** 2 * var)
        ref = float(np.interp(span / 2, t, cv))
        kappa_guesses = [[1.0 / (fa * span), 1.0 / math.sqrt(ref) * fb]
                         for fa in (0.5, 2.0) for fb in (0.5, 2.0)]
    else:
        raise DomainError(f"unknown envelope {envelope!r}")

    def model(x, tt):
        a, f, ph, c = x[:4]
        return a * np.cos(2 * np.pi * f * tt + ph) * env(x[4:], tt) + c

    best = None
    for kg in kappa_guesses:
        x0 = np.array([a0 * 1.5, f0, ph0, c0, *kg])
        try:
            sol = optimize.least_squares(lambda x: model(x, t) - y, x0, method="lm",
                                         xtol=1e-12, ftol=1e-14, gtol=1e-14, max_nfev=4000)
        except (ValueError, FloatingPointError) as exc:  # pragma: no cover - defensive
            raise FitError(f"optimiser failed: {exc}") from None
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None or best.status <= 0:
        raise FitError("least-squares fit did not converge")
    x = best.x
    a, f, ph, c = x[:4]
    if a < 0:
        a, ph = -a, ph + np.pi
    f = abs(f)
    if not f > 0:
        raise FitError("fit returned a non-positive frequency")
    kap = np.abs(x[4:])

    components = {}
    if envelope == "gaussian":
        tau = 1.0 / kap[0] if kap[0] > 0 else math.inf
        components["gaussian"] = tau
    else:
        components["hyperfine"] = 1.0 / kap[0] if kap[0] > 0 else math.inf
        components["charge"] = (_one_over_e(lambda tt: math.exp(-kap[1] ** 2 * float(cv_of(tt))), span)
                                if kap[1] > 0 else math.inf)
        tau = _one_over_e(lambda tt: float(env(kap, np.array([tt]))[0]), span)
    rms = float(np.sqrt(np.mean(best.fun**2)))
    return RabiFit(
        frequency=float(f),
        decay_1e=float(tau),
        n_rabi=float(f * tau),
        residual=rms,
        amplitude=float(a),
        phase=float((ph + np.pi) % (2 * np.pi) - np.pi),
        offset=float(c),
        decay_components=components,
    )


def _interp_factory(t, values):
    # (t sigma_V)^2 grows like t^2 ln t; interpolate/extrapolate in log-log space
    mask = (t > 0) & (values > 0)
    lt, lv = np.log(t[mask]), np.log(values[mask])
    slope = (lv[-1] - lv[-2]) / (lt[-1] - lt[-2])

    def f(tt):
        tt = np.asarray(tt, float)
        out = np.zeros_like(tt)
        pos = tt > 0
        ltt = np.log(tt[pos])
        inner = np.interp(ltt, lt, lv)
        beyond = ltt > lt[-1]
        inner[beyond] = lv[-1] + slope * (ltt[beyond] - lt[-1])
        out[pos] = np.exp(inner)
        return out
    return f
