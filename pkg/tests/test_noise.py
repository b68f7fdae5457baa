import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import sici

from dotsim.device import grad_j
from dotsim.errors import DomainError
from dotsim.noise import (
    FieldGrid,
    GateCorrelation,
    NoiseModel,
    amplitude_for_decay_time,
    charge_decay_time,
    charge_envelope,
    envelope_from_spectrum,
    filtered_variance,
    generalized_insensitivity,
    hyperfine_envelope,
    insensitivity,
    project_noise_to_gates,
    sigma_v_effective,
    sigma_v_profile,
)


def one_over_f_oracle(amplitude, t, t_avg_ns):
    """Closed form of sigma_V^2 for S = A^2/w via the cosine integral."""
    x0 = t / t_avg_ns
    _, ci = sici(x0)
    tail = 0.5 * (math.sin(x0 / 2) ** 2 / x0**2 + 0.5 * (math.sin(x0) / x0 - ci))
    return 2.0 / math.pi * amplitude**2 * tail


# --- projection -----------------------------------------------------------

def _grid(rng, n_gates=7, n_cells=1000):
    return rng.normal(size=(n_gates, n_cells)), rng.uniform(0.5, 1.5, n_cells)


def test_projection_exact_representation():
    rng = np.random.default_rng(0)
    g, vol = _grid(rng)
    v = project_noise_to_gates(FieldGrid(g, 2.0 * g[0], vol))
    assert np.allclose(v, [2, 0, 0, 0, 0, 0, 0], atol=1e-10)


def test_projection_null():
    rng = np.random.default_rng(1)
    g, vol = _grid(rng)
    phi = rng.normal(size=g.shape[1])
    # remove the component in span{g} under the volume-weighted inner product
    w = np.sqrt(vol)
    q, _ = np.linalg.qr((g * w).T)
    phi_w = phi * w
    phi = (phi_w - q @ (q.T @ phi_w)) / w
    assert np.allclose(project_noise_to_gates(FieldGrid(g, phi, vol)), 0, atol=1e-10)


def test_projection_round_trip_and_idempotence():
    rng = np.random.default_rng(2)
    g, vol = _grid(rng)
    c = rng.normal(size=7)
    v = project_noise_to_gates(FieldGrid(g, c @ g, vol))
    assert np.allclose(v, c, rtol=1e-10, atol=1e-12)
    again = project_noise_to_gates(FieldGrid(g, v @ g, vol))
    assert np.allclose(again, v, rtol=1e-10, atol=1e-12)


def test_projection_rank_deficient_min_norm():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(2, 50))
    g = np.vstack([base, base[0]])  # third gate duplicates the first
    v = project_noise_to_gates(FieldGrid(g, base[0], None))
    assert np.allclose(v, [0.5, 0, 0.5], atol=1e-10)


def test_projection_validation():
    with pytest.raises(DomainError):
        FieldGrid(np.zeros((2, 0)), np.zeros(0))
    with pytest.raises(DomainError):
        FieldGrid(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(DomainError):
        FieldGrid(np.zeros((1, 4)), np.zeros(3))


# --- spectra and effective variance -----------------------------------------

def test_noise_model_validation():
    with pytest.raises(DomainError):
        NoiseModel(amplitude=0.0)
    with pytest.raises(DomainError):
        NoiseModel(t_avg=0.0)
    with pytest.raises(DomainError):
        NoiseModel(kind="pink")
    with pytest.raises(DomainError):
        NoiseModel(kind="white")


@pytest.mark.parametrize("t", [1.0, 50.0, 3000.0])
def test_white_closed_form(t):
    s0 = 1e-9  # mV^2 s
    n = NoiseModel(kind="white", white_level=s0, t_avg=1.0)
    got = (sigma_v_effective(n, t) * t) ** 2
    assert got == pytest.approx(s0 * 1e9 * t / 2, rel=1e-4)


@pytest.mark.parametrize("t", [0.1, 10.0, 1000.0, 1e5])
def test_one_over_f_matches_cosine_integral(t):
    n = NoiseModel(0.3)
    assert sigma_v_effective(n, t) ** 2 == pytest.approx(one_over_f_oracle(0.3, t, 1e9), rel=1e-7)


def test_one_over_f_doubling_t_avg():
    a, t = 0.3, 500.0
    s1 = sigma_v_effective(NoiseModel(a, t_avg=1.0), t) ** 2
    s2 = sigma_v_effective(NoiseModel(a, t_avg=2.0), t) ** 2
    assert s2 - s1 == pytest.approx(a**2 * math.log(2) / (2 * math.pi), rel=0.01)


def test_sigma_small_t_limit_and_log_monotone():
    n = NoiseModel(0.3)
    ts = np.logspace(-3, 4, 15)
    s = sigma_v_effective(n, ts)
    assert np.all(np.isfinite(s)) and np.all(np.diff(s) < 0)
    # sigma_V^2 changes by at most A^2 ln2 / (2 pi) per halving of t
    assert np.all(np.diff(s**2) >= -(0.3**2) * math.log(10**0.5) / (2 * math.pi) * 1.01)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.1, 10.0), st.floats(1.0, 1e4))
def test_sigma_increasing_in_amplitude_and_t_avg(a, t_avg, t):
    base = sigma_v_effective(NoiseModel(a, t_avg=t_avg), t)
    assert base > 0
    assert sigma_v_effective(NoiseModel(a * 1.1, t_avg=t_avg), t) > base
    assert sigma_v_effective(NoiseModel(a, t_avg=t_avg * 2), t) > base


def test_sigma_profile_interpolation():
    n = NoiseModel(0.3)
    ts = np.linspace(0, 4000, 500)
    prof = sigma_v_profile(n, ts)
    assert prof[0] == 0.0
    exact = sigma_v_effective(n, ts[1:][::37])
    assert np.allclose(prof[1:][::37], exact, rtol=1e-6)


def test_filtered_variance_rejects_bad_time():
    with pytest.raises(DomainError):
        filtered_variance(lambda w: 1.0, 0.0, 1e9)


# --- insensitivity ------------------------------------------------------------

def test_insensitivity_arithmetic():
    g = np.zeros(7)
    g[3] = 0.016
    assert insensitivity(0.16, g) == pytest.approx(10.0)
    assert math.isinf(insensitivity(0.16, np.zeros(7)))


def test_insensitivity_reference_device_shape(ref_device, ref_frame):
    from dotsim.device import constant_j_contour

    pts = constant_j_contour(ref_device, ref_frame, 0.16, [0.0, 18.0])
    vals = [insensitivity(p.j, grad_j(ref_device, p.v)) for p in pts]
    assert vals[0] > 5 * vals[1]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=7, max_size=7), st.floats(0.1, 10), st.floats(0.01, 1))
def test_insensitivity_homogeneity_and_permutation(g, c, j):
    g = np.asarray(g)
    if np.linalg.norm(g) < 1e-6:
        return
    base = insensitivity(j, g)
    assert insensitivity(j, c * g) == pytest.approx(base / c, rel=1e-12)
    assert insensitivity(c * j, g) == pytest.approx(base * c, rel=1e-12)
    perm = np.random.default_rng(0).permutation(7)
    assert insensitivity(j, g[perm]) == pytest.approx(base, rel=1e-12)
    assert generalized_insensitivity(j, g, GateCorrelation(c * np.eye(7))) == pytest.approx(
        base / math.sqrt(c), rel=1e-12)


def test_generalized_reductions():
    g = np.array([0.01, -0.01, 0, 0, 0, 0, 0])
    gates = ["P1", "P2", "P3", "X1", "X2", "T1", "T2"]
    plain = insensitivity(0.16, g)
    assert generalized_insensitivity(0.16, g, GateCorrelation.identity(7)) == pytest.approx(plain)
    weighted = generalized_insensitivity(0.16, g, GateCorrelation.geometric(gates))
    assert weighted == pytest.approx(4 * plain, rel=1e-12)
    null = GateCorrelation.from_weights([0, 0, 1, 1, 1, 1, 1])
    assert math.isinf(generalized_insensitivity(0.16, g, null))


def test_generalized_close_to_plain_at_sop(ref_device, ref_frame):
    from dotsim.device import constant_j_contour

    (pt,) = constant_j_contour(ref_device, ref_frame, 0.16, [0.0])
    g = grad_j(ref_device, pt.v)
    plain = insensitivity(pt.j, g)
    gen = generalized_insensitivity(pt.j, g, GateCorrelation.geometric(ref_device.gates))
    assert gen == pytest.approx(plain, rel=0.1)


def test_correlation_validation_and_helpers():
    with pytest.raises(DomainError):
        GateCorrelation([[1, 2], [0, 1]])
    with pytest.raises(DomainError):
        GateCorrelation([[1, 2], [2, 1]])
    c = GateCorrelation.from_weights([0.5, 2.0, 1.0])
    assert np.trace(c.normalized().matrix) == pytest.approx(3.0)
    l = c.sqrt()
    assert np.allclose(l @ l.T, c.matrix)


# --- envelopes ------------------------------------------------------------------

def test_charge_envelope_examples():
    assert charge_envelope(0.16, 30.0, 0.3, 0.0) == 1.0
    i, s, j = 30.0, 0.3, 0.16
    t = i / (2 * math.pi * j * s)
    assert charge_envelope(j, i, s, t) == pytest.approx(math.exp(-1), rel=1e-12)
    assert j * t == pytest.approx(15.9, abs=0.05)


def test_charge_envelope_monotone_log_concave():
    t = np.linspace(0, 1000, 301)
    ln = np.log(charge_envelope(0.16, 30.0, 0.3, t))
    assert np.all(np.diff(ln) <= 0)
    assert np.all(np.diff(ln, 2) <= 1e-12)


def test_charge_decay_time_self_consistent():
    n = NoiseModel(0.3)
    tau = charge_decay_time(0.16, 100.0, n)
    assert 2 * math.pi * 0.16 * tau * sigma_v_effective(n, tau) / 100.0 == pytest.approx(1.0, rel=1e-9)
    a = amplitude_for_decay_time(0.16, 100.0, 1500.0, n)
    assert charge_decay_time(0.16, 100.0, NoiseModel(a)) == pytest.approx(1500.0, rel=1e-8)


def test_envelope_from_spectrum_zero():
    assert np.all(envelope_from_spectrum(lambda w: 0.0 * w, np.array([1.0, 10.0]), 1e9) == 1.0)


def test_envelope_paths_agree(ref_device, ref_frame):
    from dotsim.device import constant_j_contour

    n = NoiseModel(0.3)
    (pt,) = constant_j_contour(ref_device, ref_frame, 0.16, [8.0])
    g = grad_j(ref_device, pt.v)
    i = insensitivity(pt.j, g)
    tau = charge_decay_time(pt.j, i, n)
    ts = np.linspace(tau / 10, tau, 6)
    direct = charge_envelope(pt.j, i, sigma_v_effective(n, ts), ts)
    norm2 = float(g @ g)
    via = envelope_from_spectrum(lambda w: norm2 * n.spectrum(w), ts, n.t_avg_ns)
    assert np.allclose(via, direct, rtol=0.01)


def test_envelope_white_is_exponential():
    ts = np.linspace(50, 1000, 8)
    g = envelope_from_spectrum(lambda w: 1e-6 + 0.0 * w, ts, 1e12)
    slope = np.diff(np.log(g)) / np.diff(ts)
    assert np.allclose(slope, slope[0], rtol=0.01)


def test_hyperfine_envelope():
    assert hyperfine_envelope(0.0, 1000.0) == 1.0
    assert hyperfine_envelope(1000.0, 1000.0) == pytest.approx(math.exp(-1))
    assert np.all(hyperfine_envelope(np.arange(5.0), None) == 1.0)
    with pytest.raises(DomainError):
        hyperfine_envelope(1.0, -5.0)
    custom = hyperfine_envelope(2.0, 4.0, shape=lambda t, th: np.exp(-t / th))
    assert custom == pytest.approx(math.exp(-0.5))


def test_composite_envelope_figure_times():
    # product of the two channels, each reaching 1/e at its own time
    from dotsim.analysis import _one_over_e

    n = NoiseModel(0.3)
    j, i = 0.02, 30.0
    n = NoiseModel(amplitude_for_decay_time(j, i, 1500.0, n))
    charge = lambda t: float(charge_envelope(j, i, sigma_v_effective(n, t), t))
    assert _one_over_e(charge, 1000.0) == pytest.approx(1500.0, rel=1e-6)
    total = lambda t: charge(t) * float(hyperfine_envelope(t, 1000.0))
    assert _one_over_e(total, 1000.0) < 1000.0
