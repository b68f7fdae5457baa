"""Synthetic measurements: Rabi traces, scans, insensitivity protocols and sweeps."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import fit_rabi
from .barrier import tc_of_voltage
from .data import Axis, ScanGrid, Table, TimeTrace
from .device import (
    RABI_CONTRAST,
    ControlFrame,
    DeviceModel,
    constant_j_contour,
    exchange_batch,
    exchange_of_voltages,
    grad_j,
)
from .errors import DomainError, FitError
from .hubbard import DotPairParams, exchange_exact_array, singlet_spectrum
from .noise import (
    GateCorrelation,
    NoiseModel,
    charge_decay_time,
    charge_envelope,
    generalized_insensitivity,
    hyperfine_envelope,
    insensitivity,
    sigma_v_effective,
    sigma_v_profile,
)

__all__ = [
    "MeasuredInsensitivity",
    "default_workers",
    "rabi_probability",
    "rabi_trace",
    "two_freq_trace",
    "chevron_scan",
    "fingerprint_scan",
    "measured_insensitivity",
    "insensitivity_contour_sweep",
    "i_vs_j_sweep",
    "level_diagram",
    "trajectory_normals",
]

_MASK64 = (1 << 64) - 1


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("DOTSIM_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, workers):
    items = list(items)
    workers = workers or default_workers()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def trajectory_normals(seed: int, stream: int, n_samples: int, dim: int) -> np.ndarray:
    """Standard normals, one independent counter-based stream per trajectory.

    Row ``k`` depends only on ``(seed, stream, k)``, so results do not depend
    on how trajectories are chunked or scheduled.
    """
    out = np.empty((n_samples, dim))
    s = int(seed) & _MASK64
    for k in range(n_samples):
        key = np.array([s, ((int(stream) & 0xFFFFFFFF) << 32) | (k & 0xFFFFFFFF)], dtype=np.uint64)
        out[k] = np.random.Generator(np.random.Philox(key=key)).standard_normal(dim)
    return out


def rabi_probability(j, times, envelope=1.0, contrast: float = RABI_CONTRAST):
    """Singlet return probability for rotation about an axis tipped from the pole."""
    return 1.0 - contrast / 2.0 * (1.0 - envelope * np.cos(2 * np.pi * j * np.asarray(times)))


def _bias_meta(d: DeviceModel, v) -> dict:
    return dict(zip(d.gates, np.asarray(v, float).tolist()))


def _channel(d, v, times, noise, corr, t_hf, mode, n_samples, seed, stream, contrast,
             sigma_ref_time, j_shift=0.0):
    """Probability for one exchange channel plus bookkeeping values."""
    j = exchange_of_voltages(d, v) + j_shift
    if j < 0:
        raise DomainError("shifted exchange is negative")
    g = grad_j(d, v)
    corr = corr or GateCorrelation.identity(len(d.gates))
    i_c = generalized_insensitivity(j, g, corr)
    hf = hyperfine_envelope(times, t_hf)
    info = {"J_ghz": j, "I_mV": i_c}
    if noise is None:
        return rabi_probability(j, times, hf, contrast), info
    if mode == "analytic":
        sig = sigma_v_profile(noise, times)
        env = np.where(times > 0, charge_envelope(j, i_c, sig, times), 1.0) if math.isfinite(i_c) else 1.0
        return rabi_probability(j, times, env * hf, contrast), info
    if mode != "monte_carlo":
        raise DomainError(f"unknown mode {mode!r}")
    t_ref = float(sigma_ref_time or np.max(times))
    sig = sigma_v_effective(noise, t_ref)
    # quasi-static offsets: the Rabi-filtered variance sigma_V^2 is half the
    # variance of a static offset producing the same Gaussian envelope
    z = trajectory_normals(seed, stream, n_samples, len(d.gates))
    offsets = math.sqrt(2.0) * sig * z @ corr.sqrt().T
    js = exchange_batch(d, v + offsets) + j_shift
    acc = np.zeros_like(times, dtype=float)
    for chunk in np.array_split(js, max(1, len(js) // 256)):
        acc += np.cos(2 * np.pi * np.outer(chunk, times)).sum(axis=0)
    mean_cos = acc / len(js)
    info.update(sigma_v_mV=sig, sigma_ref_time_ns=t_ref, n_samples=n_samples)
    return 1.0 - contrast / 2.0 * (1.0 - hf * mean_cos), info


def _readout(p, shots, seed, stream):
    if not shots:
        return p
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [int(seed) & _MASK64, ((int(stream) & 0xFFFFFFFF) << 32) | 0xFFFFFFFF], dtype=np.uint64)))
    return rng.binomial(int(shots), np.clip(p, 0, 1)) / float(shots)


def rabi_trace(d: DeviceModel, v, times, noise: NoiseModel | None = None,
               corr: GateCorrelation | None = None, t_hf: float | None = None,
               mode: str = "analytic", n_samples: int = 2000, seed: int = 0, stream: int = 0,
               contrast: float = RABI_CONTRAST, sigma_ref_time: float | None = None,
               shots: int | None = None) -> TimeTrace:
    """Singlet probability versus evolution time at bias ``v``.

    ``mode="analytic"`` multiplies the Gaussian charge envelope (with the
    time-dependent effective noise) and the hyperfine envelope.
    ``mode="monte_carlo"`` averages ``n_samples`` trajectories with static
    Gaussian gate offsets (covariance ``2 sigma_V(t_ref)^2 C``) and recomputes
    J for every trajectory.  ``shots`` enables binomial readout noise.
    """
    times = np.asarray(times, float)
    if times.size == 0:
        raise DomainError("times must be non-empty")
    v = d.check(v)
    p, info = _channel(d, v, times, noise, corr, t_hf, mode, n_samples, seed, stream,
                       contrast, sigma_ref_time)
    p = _readout(p, shots, seed, stream)
    meta = {"bias": _bias_meta(d, v), "mode": mode, "seed": int(seed), "t_hf_ns": t_hf, **info}
    return TimeTrace(times, p, meta)


def two_freq_trace(d: DeviceModel, v, times, weight: float, j2_offset: float | None = None,
                   v2=None, noise=None, corr=None, t_hf=None, mode="analytic",
                   n_samples=2000, seed=0, stream=0, contrast=RABI_CONTRAST) -> TimeTrace:
    """Incoherent mixture ``w P1 + (1 - w) P2`` of two exchange channels.

    The second channel sits either at a second bias ``v2`` or at the first
    bias with its exchange shifted by ``j2_offset`` (GHz).
    """
    if not 0.0 <= weight <= 1.0:
        raise DomainError("weight must lie in [0, 1]")
    if (j2_offset is None) == (v2 is None):
        raise DomainError("give exactly one of j2_offset or v2")
    times = np.asarray(times, float)
    v = d.check(v)
    p1, i1 = _channel(d, v, times, noise, corr, t_hf, mode, n_samples, seed, stream, contrast, None)
    if v2 is not None:
        v2 = d.check(v2)
        p2, i2 = _channel(d, v2, times, noise, corr, t_hf, mode, n_samples, seed, stream + 1,
                          contrast, None)
    else:
        p2, i2 = _channel(d, v, times, noise, corr, t_hf, mode, n_samples, seed, stream + 1,
                          contrast, None, j_shift=j2_offset)
    meta = {"bias": _bias_meta(d, v), "weight": weight, "J1_ghz": i1["J_ghz"],
            "J2_ghz": i2["J_ghz"], "mode": mode, "seed": int(seed)}
    return TimeTrace(times, weight * p1 + (1.0 - weight) * p2, meta)


def chevron_scan(d: DeviceModel, frame: ControlFrame, deltas, times, x: float,
                 noise=None, corr=None, t_hf=None, workers=None) -> ScanGrid:
    """Rabi traces versus detuning at a fixed exchange-axis bias ``x`` (mV)."""
    deltas = np.asarray(deltas, float)
    times = np.asarray(times, float)

    def row(delta):
        return rabi_trace(d, frame.point(d, delta, x), times, noise, corr, t_hf).p_singlet

    data = np.array(_map(row, deltas, workers))
    return ScanGrid(Axis("time", "ns", times), Axis("delta", "GHz", deltas), data,
                    metadata={"x_mV": x, "kind": "chevron"})


def fingerprint_scan(d: DeviceModel, frame: ControlFrame, deltas, xs, evolve_time: float = 500.0,
                     noise=None, corr=None, t_hf=None, two_freq: tuple | None = None,
                     workers=None) -> ScanGrid:
    """Singlet probability after ``evolve_time`` over (Ṽ_X1, Δ).

    ``two_freq=(weight, ratio)`` mixes in a second channel whose exchange is
    ``ratio`` times the main one, with weight ``1 - weight``.
    """
    deltas = np.asarray(deltas, float)
    xs = np.asarray(xs, float)
    corr = corr or GateCorrelation.identity(len(d.gates))
    sig = sigma_v_effective(noise, evolve_time) if noise is not None else 0.0
    hf = float(hyperfine_envelope(np.array([evolve_time]), t_hf)[0])

    def prob(j, i_c):
        env = hf * (charge_envelope(j, i_c, sig, evolve_time) if sig and math.isfinite(i_c) else 1.0)
        return rabi_probability(j, evolve_time, env)

    def row(delta):
        out = np.empty(len(xs))
        for k, x in enumerate(xs):
            v = frame.point(d, delta, x)
            j = exchange_of_voltages(d, v)
            i_c = generalized_insensitivity(j, grad_j(d, v), corr) if sig else math.inf
            p = prob(j, i_c)
            if two_freq is not None:
                w, ratio = two_freq
                p = w * p + (1.0 - w) * prob(ratio * j, i_c)
            out[k] = p
        return out

    data = np.array(_map(row, deltas, workers))
    return ScanGrid(Axis("x_exchange", "mV", xs), Axis("delta", "GHz", deltas), data,
                    metadata={"evolve_time_ns": evolve_time, "kind": "fingerprint",
                              "two_freq": list(two_freq) if two_freq else None})


@dataclass
class MeasuredInsensitivity:
    i: float  # mV
    grad: np.ndarray  # GHz/mV
    j: float  # GHz


def measured_insensitivity(d: DeviceModel, v, perturbation: float = 0.5, periods: float = 40.0,
                           points_per_period: float = 16.0) -> MeasuredInsensitivity:
    """Insensitivity from fitted Rabi frequencies at ``v ± perturbation`` on each gate.

    Each perturbed bias gets a noiseless trace spanning ``periods`` of the
    unperturbed exchange; the fitted frequencies form a centred difference.
    """
    v = d.check(v)
    j0 = exchange_of_voltages(d, v)
    if not j0 > 0:
        raise FitError("no exchange at this bias")
    dt = 1.0 / (j0 * points_per_period)
    times = np.arange(0.0, periods / j0, dt)

    def freq(bias):
        return fit_rabi(rabi_trace(d, bias, times)).frequency

    n = len(d.gates)
    grad = np.empty(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = perturbation
        grad[k] = (freq(v + e) - freq(v - e)) / (2.0 * perturbation)
    return MeasuredInsensitivity(i=insensitivity(freq(v), grad), grad=grad, j=j0)


def _simulated_n_rabi(d, v, j, i_inj, noise, corr, n_samples, seed, stream, highpass_cutoff,
                      t_hf, span_factor=2.5, points_per_period=16.0, max_points=40000):
    tau = charge_decay_time(j, i_inj, noise)
    if t_hf:
        tau = 1.0 / math.sqrt(1.0 / tau**2 + 1.0 / t_hf**2)
    t_max = span_factor * tau
    dt = max(1.0 / (j * points_per_period), t_max / max_points)
    times = np.arange(0.0, t_max, dt)
    tr = rabi_trace(d, v, times, noise, corr, t_hf, mode="monte_carlo", n_samples=n_samples,
                    seed=seed, stream=stream)
    return fit_rabi(tr, highpass_cutoff=highpass_cutoff)


def insensitivity_contour_sweep(d: DeviceModel, frame: ControlFrame, j_target: float, deltas,
                                noise: NoiseModel, corr: GateCorrelation | None = None,
                                gen_corr: GateCorrelation | None = None, n_samples: int = 2000,
                                seed: int = 0, t_hf: float | None = None,
                                highpass_cutoff: float | None = None, x_bounds=(0.0, 1500.0),
                                perturbation: float = 0.5, simulate: bool = True,
                                workers=None) -> Table:
    """Insensitivity and fringe counts along a constant-J contour.

    ``corr`` is the correlation of the noise injected in the Monte-Carlo
    (identity by default); ``gen_corr`` defines the generalised
    insensitivity (plungers weighted 1/4 by default).  Unreachable contour
    points and failed fits are kept as rows with ``ok = False``.
    """
    corr = corr or GateCorrelation.identity(len(d.gates))
    gen_corr = gen_corr or GateCorrelation.geometric(d.gates)
    points = constant_j_contour(d, frame, j_target, deltas, x_bounds=x_bounds)

    def evaluate(item):
        k, pt = item
        row = {"delta": pt.delta, "x": pt.x, "J": pt.j, "I": np.nan, "I_direct": np.nan,
               "I_generalized": np.nan, "n_rabi_predicted": np.nan,
               "n_rabi_generalized": np.nan, "n_rabi_simulated": np.nan, "ok": pt.ok}
        if not pt.ok:
            return row
        g = grad_j(d, pt.v)
        i_direct = insensitivity(pt.j, g)
        i_gen = generalized_insensitivity(pt.j, g, gen_corr)
        row.update(I_direct=i_direct, I_generalized=i_gen)
        try:
            row["I"] = measured_insensitivity(d, pt.v, perturbation).i
        except FitError:
            row["ok"] = False
        tau = charge_decay_time(pt.j, i_direct, noise)
        row["n_rabi_predicted"] = i_direct / (2 * math.pi * sigma_v_effective(noise, tau))
        tau_g = charge_decay_time(pt.j, i_gen, noise)
        row["n_rabi_generalized"] = i_gen / (2 * math.pi * sigma_v_effective(noise, tau_g))
        if simulate:
            try:
                fit = _simulated_n_rabi(d, pt.v, pt.j, generalized_insensitivity(pt.j, g, corr),
                                        noise, corr, n_samples, seed, k, highpass_cutoff, t_hf)
                row["n_rabi_simulated"] = fit.n_rabi
            except FitError:
                row["ok"] = False
        return row

    rows = _map(evaluate, list(enumerate(points)), workers)
    cols = {k: [r[k] for r in rows] for k in rows[0]} if rows else {}
    units = {"delta": "GHz", "x": "mV", "J": "GHz", "I": "mV", "I_direct": "mV",
             "I_generalized": "mV", "n_rabi_predicted": "", "n_rabi_generalized": "",
             "n_rabi_simulated": "", "ok": ""}
    return Table(cols, units, {"j_target_ghz": j_target, "seed": int(seed), "n_samples": n_samples,
                               "noise_amplitude_mV": noise.amplitude})


def i_vs_j_sweep(d: DeviceModel, frame: ControlFrame, xs, noise: NoiseModel | None = None,
                 gen_corr: GateCorrelation | None = None) -> Table:
    """J and insensitivity along the symmetric axis (Δ = 0)."""
    xs = np.asarray(xs, float)
    gen_corr = gen_corr or GateCorrelation.geometric(d.gates)
    cols = {"x": [], "J": [], "I": [], "I_generalized": [], "t_c": []}
    if noise is not None:
        cols["n_rabi_predicted"] = []
    for x in xs:
        v = frame.point(d, 0.0, x)
        j = exchange_of_voltages(d, v)
        g = grad_j(d, v)
        i = insensitivity(j, g)
        cols["x"].append(float(x))
        cols["J"].append(j)
        cols["I"].append(i)
        cols["I_generalized"].append(generalized_insensitivity(j, g, gen_corr))
        cols["t_c"].append(float(tc_of_voltage(d.barrier, d.barrier_voltage(v))))
        if noise is not None:
            tau = charge_decay_time(j, i, noise)
            cols["n_rabi_predicted"].append(i / (2 * math.pi * sigma_v_effective(noise, tau)))
    units = {"x": "mV", "J": "GHz", "I": "mV", "I_generalized": "mV", "t_c": "GHz",
             "n_rabi_predicted": ""}
    return Table(cols, {k: units[k] for k in cols})


def level_diagram(u: float, tcs, deltas) -> Table:
    """Singlet eigenenergies, triplet reference and exchange versus Δ for several t_c."""
    cols = {"t_c": [], "delta": [], "E0": [], "E1": [], "E2": [], "triplet": [], "J": []}
    for tc in np.asarray(tcs, float):
        for delta in np.asarray(deltas, float):
            spec = singlet_spectrum(DotPairParams(u_s=u, tc_s=tc, delta=delta))
            cols["t_c"].append(float(tc))
            cols["delta"].append(float(delta))
            for k in range(3):
                cols[f"E{k}"].append(float(spec.energies[k]))
            cols["triplet"].append(spec.triplet_energy)
            cols["J"].append(float(exchange_exact_array(u, tc, delta)))
    units = {"t_c": "GHz", "delta": "GHz", "E0": "GHz", "E1": "GHz", "E2": "GHz",
             "triplet": "GHz", "J": "GHz"}
    return Table(cols, units)
