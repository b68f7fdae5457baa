import math

import numpy as np
import pytest

from dotsim.analysis import count_fringes, fft_spectrum, peak_frequencies
from dotsim.data import ScanGrid, TimeTrace
from dotsim.device import constant_j_contour, grad_j
from dotsim.errors import DomainError
from dotsim.experiment import (
    chevron_scan,
    fingerprint_scan,
    i_vs_j_sweep,
    insensitivity_contour_sweep,
    level_diagram,
    measured_insensitivity,
    rabi_trace,
    trajectory_normals,
    two_freq_trace,
)
from dotsim.noise import GateCorrelation, NoiseModel, charge_decay_time, insensitivity


@pytest.fixture(scope="module")
def sop(ref_device, ref_frame):
    (pt,) = constant_j_contour(ref_device, ref_frame, 0.16, [0.0])
    return pt


def test_noiseless_bounds(ref_device, sop):
    t = np.arange(0, 200, 0.1)
    tr = rabi_trace(ref_device, sop.v, t)
    assert tr.p_singlet[0] == pytest.approx(1.0)
    assert tr.p_singlet.min() == pytest.approx(0.25, abs=2e-3)
    assert np.all((tr.p_singlet >= 0.25 - 1e-12) & (tr.p_singlet <= 1 + 1e-12))
    assert tr.metadata["J_ghz"] == pytest.approx(0.16, rel=1e-6)


def test_invalid_inputs(ref_device, sop):
    with pytest.raises(DomainError):
        rabi_trace(ref_device, sop.v, [])
    with pytest.raises(DomainError):
        rabi_trace(ref_device, sop.v, [0, 1.0], NoiseModel(), mode="exact")
    with pytest.raises(DomainError):
        rabi_trace(ref_device, ref_device.vector(P1=300.0, P2=-300.0), [0, 1.0])


def test_monte_carlo_matches_analytic(ref_device, sop):
    n = NoiseModel(0.3)
    i = insensitivity(sop.j, grad_j(ref_device, sop.v))
    tau = charge_decay_time(sop.j, i, n)
    t = np.arange(0, 2 * tau, 0.5)
    mc = rabi_trace(ref_device, sop.v, t, n, mode="monte_carlo", seed=1)
    an = rabi_trace(ref_device, sop.v, t, n)
    assert np.max(np.abs(mc.p_singlet - an.p_singlet)) < 0.02
    assert np.all((mc.p_singlet >= 0) & (mc.p_singlet <= 1))


def test_monte_carlo_reproducible_and_converging(ref_device, sop):
    n = NoiseModel(0.3)
    t = np.arange(0, 300, 0.5)
    a = rabi_trace(ref_device, sop.v, t, n, mode="monte_carlo", n_samples=500, seed=5)
    b = rabi_trace(ref_device, sop.v, t, n, mode="monte_carlo", n_samples=500, seed=5)
    assert np.array_equal(a.p_singlet, b.p_singlet)
    c = rabi_trace(ref_device, sop.v, t, n, mode="monte_carlo", n_samples=1000, seed=5)
    # the first 500 trajectories are shared, so the difference is the second half's deviation
    assert np.max(np.abs(c.p_singlet - a.p_singlet)) < 4 * 0.375 / math.sqrt(500)


def test_trajectory_streams_independent_of_batch():
    full = trajectory_normals(3, 0, 10, 7)
    part = trajectory_normals(3, 0, 4, 7)
    assert np.array_equal(full[:4], part)
    assert not np.array_equal(full, trajectory_normals(3, 1, 10, 7))


def test_readout_shots(ref_device, sop):
    t = np.arange(0, 50, 0.5)
    a = rabi_trace(ref_device, sop.v, t, shots=100, seed=2)
    b = rabi_trace(ref_device, sop.v, t, shots=100, seed=2)
    assert np.array_equal(a.p_singlet, b.p_singlet)
    assert np.allclose(a.p_singlet * 100, np.round(a.p_singlet * 100))


def test_two_freq_reduction_and_bounds(ref_device, ref_frame):
    (pt,) = constant_j_contour(ref_device, ref_frame, 0.05, [0.0])
    t = np.arange(0, 2000, 0.5)
    single = rabi_trace(ref_device, pt.v, t)
    assert np.allclose(two_freq_trace(ref_device, pt.v, t, 1.0, j2_offset=0.01).p_singlet, single.p_singlet)
    mix = two_freq_trace(ref_device, pt.v, t, 0.5, j2_offset=0.01)
    other = two_freq_trace(ref_device, pt.v, t, 0.0, j2_offset=0.01)
    lo = np.minimum(single.p_singlet, other.p_singlet)
    hi = np.maximum(single.p_singlet, other.p_singlet)
    assert np.all((mix.p_singlet >= lo - 1e-12) & (mix.p_singlet <= hi + 1e-12))
    peaks = sorted(peak_frequencies(fft_spectrum(mix), 2))
    assert peaks == pytest.approx([0.05, 0.06], abs=0.5 / 2000)
    with pytest.raises(DomainError):
        two_freq_trace(ref_device, pt.v, t, 1.5, j2_offset=0.01)
    with pytest.raises(DomainError):
        two_freq_trace(ref_device, pt.v, t, 0.5)


def test_two_freq_second_bias(ref_device, ref_frame):
    a, b = constant_j_contour(ref_device, ref_frame, 0.05, [0.0, 10.0])
    t = np.arange(0, 100, 1.0)
    mix = two_freq_trace(ref_device, a.v, t, 0.3, v2=b.v)
    assert mix.metadata["J2_ghz"] == pytest.approx(0.05, rel=1e-5)


@pytest.fixture(scope="module")
def chevron(ref_device, ref_frame, sop):
    deltas = np.linspace(-15, 15, 11)
    return chevron_scan(ref_device, ref_frame, deltas, np.arange(0, 800, 0.5), sop.x, NoiseModel(0.3))


def test_chevron_symmetric_and_slowest_at_sop(chevron):
    assert np.allclose(chevron.data, chevron.data[::-1], atol=1e-9)
    freqs = [peak_frequencies(fft_spectrum(TimeTrace(chevron.x.values, row), pad=4), 1)[0]
             for row in chevron.data]
    assert int(np.argmin(freqs)) == 5


def test_chevron_most_fringes_at_sop(chevron):
    counts = [count_fringes(TimeTrace(chevron.x.values, row), 0.1) for row in chevron.data]
    assert int(np.argmax(counts)) == 5
    assert counts[5] > counts[0]


def test_scan_parallel_deterministic(ref_device, ref_frame, sop):
    deltas = np.linspace(-10, 10, 5)
    t = np.arange(0, 100, 1.0)
    a = chevron_scan(ref_device, ref_frame, deltas, t, sop.x, NoiseModel(0.3), workers=1)
    b = chevron_scan(ref_device, ref_frame, deltas, t, sop.x, NoiseModel(0.3), workers=4)
    assert np.array_equal(a.data, b.data)


def test_fingerprint_extrema_at_sop_and_density(ref_device, ref_frame):
    deltas = np.linspace(-10, 10, 81)
    xs = np.linspace(0, 700, 141)
    g = fingerprint_scan(ref_device, ref_frame, deltas, xs, 500.0)
    col = g.data[:, 100]
    d = np.gradient(col, deltas)
    assert abs(d[40]) < 1e-6 * (np.abs(d).max() + 1e-30)
    # fringe density along x grows with x
    row = g.data[40]
    crossings = np.where(np.diff(np.sign(row - row.mean())) != 0)[0]
    assert np.sum(crossings > 70) > np.sum(crossings <= 70)


def test_fingerprint_two_freq_faint(ref_device, ref_frame):
    deltas = np.linspace(-10, 10, 11)
    xs = np.linspace(300, 600, 31)
    a = fingerprint_scan(ref_device, ref_frame, deltas, xs)
    b = fingerprint_scan(ref_device, ref_frame, deltas, xs, two_freq=(0.85, 1.2))
    diff = np.abs(a.data - b.data)
    assert 0.0 < diff.max() <= 0.15 * 0.75 * 2 + 1e-12


def test_measured_insensitivity(ref_device, ref_frame):
    pts = constant_j_contour(ref_device, ref_frame, 0.16, [0.0, 18.0])
    m = [measured_insensitivity(ref_device, p.v) for p in pts]
    for p, mi in zip(pts, m):
        assert mi.i == pytest.approx(insensitivity(p.j, grad_j(ref_device, p.v)), rel=0.02)
    assert m[0].i / m[1].i >= 5
    half = measured_insensitivity(ref_device, pts[0].v, perturbation=0.25)
    assert half.i == pytest.approx(m[0].i, rel=0.01)


def test_contour_sweep_shape(ref_device, ref_frame):
    t = insensitivity_contour_sweep(ref_device, ref_frame, 0.16, np.linspace(-15, 15, 7),
                                    NoiseModel(0.3), n_samples=2000, seed=1)
    i = t["I"]
    assert int(np.argmax(i)) == 3
    assert np.all(t["ok"])
    rel = np.abs(t["n_rabi_simulated"] / t["n_rabi_predicted"] - 1)
    assert np.all(rel < 0.15)


def test_contour_sweep_flags_unreachable(ref_device, ref_frame):
    t = insensitivity_contour_sweep(ref_device, ref_frame, 0.16, [0.0, 18.0], NoiseModel(0.3),
                                    x_bounds=(0.0, 400.0), simulate=False)
    assert list(t["ok"]) == [False, True]
    assert math.isnan(t["I"][0])


def test_i_vs_j_sweep(ref_device, ref_frame):
    t = i_vs_j_sweep(ref_device, ref_frame, np.linspace(0, 700, 36), NoiseModel(0.3))
    j, i, x = t["J"], t["I"], t["x"]
    assert np.all(np.diff(j) > 0)
    assert np.all(np.diff(i) > 0)
    assert i[-1] / i[0] == pytest.approx(2.0, abs=0.6)
    slope = np.diff(np.log(j)) / np.diff(x)
    assert np.all(np.diff(slope[len(slope) // 2:]) < 0)
    assert np.all(t["n_rabi_predicted"] > 0)


def test_level_diagram():
    t = level_diagram(20.0, [1.0], np.linspace(-19, 19, 39))
    e = np.stack([t["E0"], t["E1"], t["E2"]])
    assert np.all(np.diff(e, axis=0) >= 0)
    assert np.allclose(t["J"], -t["E0"])
    assert int(np.argmin(t["J"])) == 19


def test_scan_serialisation(tmp_path, chevron):
    chevron.to_json(tmp_path / "c.json")
    back = ScanGrid.from_json(tmp_path / "c.json")
    assert np.array_equal(back.data, chevron.data)
    chevron.to_csv(tmp_path / "c.csv")
    head = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert head == "delta [GHz],time [ns],p_singlet"
    raw = (tmp_path / "c.csv").read_bytes()
    assert b"\r" not in raw


def test_generalized_insensitivity_tracks_quiet_plunger_injection(ref_device, ref_frame):
    # plungers injected at a quarter of the exchange-gate noise, matching the A_P = 1/4 weighting
    corr = GateCorrelation.from_weights([0.25 if g.startswith("P") else 1.0 for g in ref_device.gates])
    tab = insensitivity_contour_sweep(ref_device, ref_frame, 0.16, np.linspace(-15, 15, 7), NoiseModel(0.3),
                                      corr=corr, n_samples=1000, seed=3)
    sim = np.asarray(tab["n_rabi_simulated"], float)
    assert np.all(np.isfinite(sim))
    rms = [np.sqrt(np.mean((sim / np.asarray(tab[k]) - 1) ** 2)) for k in ("n_rabi_generalized", "n_rabi_predicted")]
    assert rms[0] < 0.15
    assert rms[0] < rms[1] / 3
