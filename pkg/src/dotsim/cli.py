"""Command-line front end: ``dotsim <command> [--config FILE] [--set key=value] ...``.

Every command writes ``<name>.csv`` and ``<name>.json`` into ``--out`` plus a
``manifest.json`` with the config hash, seed and tool version.  Exit codes:
0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import fft_spectrum, fit_rabi, peak_frequencies
from .barrier import WkbBarrier, fit_wkb, sop_exchange, tc_of_voltage
from .config import ConfigError, RunConfig, load_config
from .data import Table, _write_json
from .device import (
    angle_between,
    calibrate_axes,
    constant_j_contour,
    exchange_of_voltages,
    grad_j,
    synth_stability_map,
    true_frame,
)
from .errors import CalibrationError, ConvergenceError, DomainError
from .experiment import (
    chevron_scan,
    default_workers,
    fingerprint_scan,
    i_vs_j_sweep,
    insensitivity_contour_sweep,
    level_diagram,
    rabi_trace,
    two_freq_trace,
)
from .noise import NoiseModel, amplitude_for_decay_time, generalized_insensitivity, sigma_v_profile

__all__ = ["main", "COMMANDS"]


class NumericalFailure(Exception):
    def __init__(self, operation: str, message: str):
        self.operation = operation
        super().__init__(f"{operation}: {message}")


# per-command parameter defaults; keys outside these sets are rejected
COMMANDS = {
    "rabi": dict(name="rabi", delta=0.0, x=None, j_target=0.16, tmax=2000.0, dt=0.5,
                 mode="analytic", n_samples=2000, t_hf=None, shots=None,
                 charge_decay_time=None, fit=None, highpass_cutoff=None),
    "twofreq": dict(name="twofreq", delta=0.0, x=None, j_target=0.05, j2_offset=0.01, weight=0.5,
                    tmax=2000.0, dt=0.5, t_hf=None, n_peaks=2, pad=4),
    "chevron": dict(name="chevron", deltas=[-18.0, 18.0, 73], x=None, j_target=0.16,
                    tmax=500.0, dt=0.5, t_hf=None),
    "fingerprint": dict(name="fingerprint", deltas=[-18.0, 18.0, 121], xs=[0.0, 700.0, 141],
                        evolve_time=500.0, t_hf=None, two_freq=None),
    "contour": dict(name="contour", j_target=0.16, deltas=[-18.0, 18.0, 13], n_samples=2000,
                    simulate=True, highpass_cutoff=None, t_hf=None, x_bounds=[0.0, 1500.0],
                    perturbation=0.5),
    "ivj": dict(name="ivj", xs=[0.0, 700.0, 71]),
    "calibrate": dict(name="calibrate"),
    "stability": dict(name="stability", p1=[-250.0, 250.0, 201], p2=[-250.0, 250.0, 201],
                      v_x1=0.0, evolve_time=200.0),
    "fitwkb": dict(name="fitwkb", data=None, xs=[0.0, 900.0, 19], rel_noise=0.0, j_min=None,
                   init={"t0": 2.0, "a": 2.0, "b": 0.01}),
    "levels": dict(name="levels", u=None, tcs=[0.5, 1.0, 2.0], deltas=[-19.5, 19.5, 157]),
}

_CAL_DEFAULTS = dict(p1=[-250.0, 250.0, 201], p2=[-250.0, 250.0, 201], v_x1=[0.0, 400.0],
                     evolve_time=200.0)


def _grid(spec, what):
    """``[start, stop, num]`` -> linspace; ``{"values": [...]}`` -> explicit array."""
    if isinstance(spec, dict) and "values" in spec:
        return np.asarray(spec["values"], float)
    if isinstance(spec, (list, tuple)) and len(spec) == 3:
        lo, hi, n = spec
        if int(n) != n or n < 1:
            raise ConfigError(f"{what}: number of points must be a positive integer")
        return np.linspace(float(lo), float(hi), int(n))
    raise ConfigError(f"{what} must be [start, stop, num] or {{\"values\": [...]}}")


def _times(p):
    tmax, dt = float(p["tmax"]), float(p["dt"])
    if not (tmax > 0 and dt > 0):
        raise ConfigError("tmax and dt must be positive")
    return np.linspace(0.0, tmax, int(round(tmax / dt)) + 1)


def _params(cfg: RunConfig, command: str, flags: dict) -> dict:
    defaults = COMMANDS[command]
    exp = dict(cfg.experiment)
    exp.pop("command", None)
    p = dict(defaults)
    for src in (exp, flags):
        for k, v in src.items():
            if k not in defaults:
                raise ConfigError(f"parameter {k!r} is not valid for command {command!r}")
            p[k] = v
    return p


def _resolve_frame(cfg: RunConfig):
    if cfg.frame == "truth":
        return true_frame(cfg.device), {"frame": "truth"}
    if cfg.frame == "calibrate":
        frame, info = _calibrate(cfg)
        return frame, {"frame": "calibrate", **info}
    return cfg.frame, {"frame": "explicit"}


def _calibrate(cfg: RunConfig):
    d = cfg.device
    c = {**_CAL_DEFAULTS, **cfg.calibration}
    p1, p2 = _grid(c["p1"], "calibration.p1"), _grid(c["p2"], "calibration.p2")
    v_lo, v_hi = map(float, c["v_x1"])
    maps = [synth_stability_map(d, p1, p2, vx, c["evolve_time"]) for vx in (v_lo, v_hi)]
    try:
        frame = calibrate_axes(*maps)
    except CalibrationError as exc:
        raise NumericalFailure("calibrate_axes", str(exc)) from None
    truth = true_frame(d)
    info = {"angle_error_exchange_deg": angle_between(frame.u_exchange, truth.u_exchange),
            "angle_error_detuning_deg": angle_between(frame.u_detuning, truth.u_detuning)}
    return frame, info


def _x_for(cfg, frame, p, delta):
    if p.get("x") is not None:
        return float(p["x"])
    (pt,) = constant_j_contour(cfg.device, frame, float(p["j_target"]), [delta])
    if not pt.ok:
        raise NumericalFailure("constant_j_contour", pt.message)
    return pt.x


def _need_seed(cfg, command):
    if cfg.seed is None:
        raise ConfigError(f"{command}: a seed is required when Monte-Carlo sampling is enabled")
    return cfg.seed


def run_rabi(cfg, p, workers):
    d = cfg.device
    frame, finfo = _resolve_frame(cfg)
    delta = float(p["delta"])
    v = frame.point(d, delta, _x_for(cfg, frame, p, delta))
    noise = cfg.noise
    if p["charge_decay_time"] is not None:
        if noise is None:
            noise = NoiseModel()
        j = exchange_of_voltages(d, v)
        i_c = generalized_insensitivity(j, grad_j(d, v), cfg.correlation)
        noise = NoiseModel(amplitude_for_decay_time(j, i_c, float(p["charge_decay_time"]), noise),
                           noise.kind, noise.t_avg)
    seed = _need_seed(cfg, "rabi") if p["mode"] == "monte_carlo" else (cfg.seed or 0)
    tr = rabi_trace(d, v, _times(p), noise, cfg.correlation, p["t_hf"], mode=p["mode"],
                    n_samples=int(p["n_samples"]), seed=seed, shots=p["shots"])
    tr.metadata.update(finfo)
    if noise is not None:
        tr.metadata["noise_amplitude_mV"] = noise.amplitude
    if p["fit"]:
        cv = None
        if p["fit"] == "double":
            if noise is None:
                raise ConfigError("double-envelope fit needs a noise model")
            cv = (tr.times * sigma_v_profile(noise, tr.times)) ** 2
        try:
            f = fit_rabi(tr, highpass_cutoff=p["highpass_cutoff"], envelope=p["fit"],
                         charge_variance=cv)
        except ConvergenceError as exc:
            raise NumericalFailure("fit_rabi", str(exc)) from None
        tr.metadata["fit"] = {"frequency_ghz": f.frequency, "decay_1e_ns": f.decay_1e,
                              "n_rabi": f.n_rabi, "residual": f.residual,
                              "components_ns": f.decay_components}
    return [(p["name"], tr)]


def run_twofreq(cfg, p, workers):
    d = cfg.device
    frame, finfo = _resolve_frame(cfg)
    delta = float(p["delta"])
    v = frame.point(d, delta, _x_for(cfg, frame, p, delta))
    tr = two_freq_trace(d, v, _times(p), float(p["weight"]), j2_offset=float(p["j2_offset"]),
                        t_hf=p["t_hf"], seed=cfg.seed or 0)
    spec = fft_spectrum(tr, pad=int(p["pad"]))
    peaks = peak_frequencies(spec, int(p["n_peaks"]))
    tr.metadata.update(finfo, peaks_ghz=sorted(peaks))
    sp = Table({"frequency": spec.frequencies, "magnitude": spec.magnitude},
               {"frequency": "GHz", "magnitude": ""}, {"peaks_ghz": sorted(peaks)})
    return [(p["name"], tr), (p["name"] + "_spectrum", sp)]


def run_chevron(cfg, p, workers):
    d = cfg.device
    frame, finfo = _resolve_frame(cfg)
    x = _x_for(cfg, frame, p, 0.0)
    g = chevron_scan(d, frame, _grid(p["deltas"], "deltas"), _times(p), x, cfg.noise,
                     cfg.correlation, p["t_hf"], workers=workers)
    g.metadata.update(finfo)
    return [(p["name"], g)]


def run_fingerprint(cfg, p, workers):
    frame, finfo = _resolve_frame(cfg)
    tf = tuple(p["two_freq"]) if p["two_freq"] else None
    g = fingerprint_scan(cfg.device, frame, _grid(p["deltas"], "deltas"), _grid(p["xs"], "xs"),
                         float(p["evolve_time"]), cfg.noise, cfg.correlation, p["t_hf"], tf,
                         workers=workers)
    g.metadata.update(finfo)
    return [(p["name"], g)]


def run_contour(cfg, p, workers):
    if cfg.noise is None:
        raise ConfigError("contour needs a noise section")
    seed = _need_seed(cfg, "contour") if p["simulate"] else (cfg.seed or 0)
    frame, finfo = _resolve_frame(cfg)
    t = insensitivity_contour_sweep(
        cfg.device, frame, float(p["j_target"]), _grid(p["deltas"], "deltas"), cfg.noise,
        cfg.correlation, cfg.generalized_correlation, n_samples=int(p["n_samples"]), seed=seed,
        t_hf=p["t_hf"], highpass_cutoff=p["highpass_cutoff"], x_bounds=tuple(p["x_bounds"]),
        perturbation=float(p["perturbation"]), simulate=bool(p["simulate"]), workers=workers)
    t.metadata.update(finfo)
    out = [(p["name"], t)]
    bad = [f"{dl:g}" for dl, ok in zip(t["delta"], t["ok"]) if not ok]
    if bad:
        raise _PartialFailure(out, "insensitivity_contour_sweep",
                              f"failed contour points at delta = {', '.join(bad)} GHz")
    return out


class _PartialFailure(NumericalFailure):
    """Numerical failure after some outputs were produced; they are still written."""

    def __init__(self, outputs, operation, message):
        self.outputs = outputs
        super().__init__(operation, message)


def run_ivj(cfg, p, workers):
    frame, finfo = _resolve_frame(cfg)
    t = i_vs_j_sweep(cfg.device, frame, _grid(p["xs"], "xs"), cfg.noise,
                     cfg.generalized_correlation)
    t.metadata.update(finfo)
    return [(p["name"], t)]


def run_calibrate(cfg, p, workers):
    frame, info = _calibrate(cfg)
    truth = true_frame(cfg.device)
    gates = list(cfg.device.gates)
    t = Table({"gate": gates, "u_detuning": frame.u_detuning, "u_exchange": frame.u_exchange,
               "true_u_detuning": truth.u_detuning, "true_u_exchange": truth.u_exchange,
               "v0": frame.v0},
              {"v0": "mV"}, {**info, "frame": frame.as_dict(gates)})
    return [(p["name"], t)]


def run_stability(cfg, p, workers):
    g = synth_stability_map(cfg.device, _grid(p["p1"], "p1"), _grid(p["p2"], "p2"),
                            float(p["v_x1"]), float(p["evolve_time"]))
    return [(p["name"], g)]


def run_fitwkb(cfg, p, workers):
    d = cfg.device
    if p["data"] is not None:
        data = np.asarray(p["data"], float)
        if data.ndim != 2 or data.shape[1] != 2:
            raise ConfigError("fitwkb data must be a list of [V, J] pairs")
        source = "config"
    else:
        frame, _ = _resolve_frame(cfg)
        ivj = i_vs_j_sweep(d, frame, _grid(p["xs"], "xs"))
        j = ivj["J"]
        if p["rel_noise"]:
            rng = np.random.default_rng(_need_seed(cfg, "fitwkb"))
            j = j * np.exp(float(p["rel_noise"]) * rng.standard_normal(len(j)))
        data = np.stack([ivj["x"], j], axis=1)
        source = "reference sweep along the symmetric axis"
    init = WkbBarrier(**p["init"])
    try:
        fit = fit_wkb([tuple(r) for r in data], d.hubbard_u, init, j_min=p["j_min"])
    except ConvergenceError as exc:
        raise NumericalFailure("fit_wkb", str(exc)) from None
    j_fit = sop_exchange(tc_of_voltage(fit.barrier, data[:, 0]), d.hubbard_u)
    t = Table({"V": data[:, 0], "J": data[:, 1], "J_fit": j_fit},
              {"V": "mV", "J": "GHz", "J_fit": "GHz"},
              {"source": source, "t0_ghz": fit.barrier.t0, "a": fit.barrier.a,
               "b_per_mV": fit.barrier.b, "residual": fit.residual, "converged": fit.converged,
               "n_iter": fit.n_iter})
    if not fit.converged:
        raise _PartialFailure([(p["name"], t)], "fit_wkb", fit.message)
    return [(p["name"], t)]


def run_levels(cfg, p, workers):
    u = float(p["u"]) if p["u"] is not None else cfg.device.hubbard_u
    t = level_diagram(u, np.asarray(p["tcs"], float), _grid(p["deltas"], "deltas"))
    t.metadata["u_ghz"] = u
    return [(p["name"], t)]


RUNNERS = {
    "rabi": run_rabi, "twofreq": run_twofreq, "chevron": run_chevron,
    "fingerprint": run_fingerprint, "contour": run_contour, "ivj": run_ivj,
    "calibrate": run_calibrate, "stability": run_stability, "fitwkb": run_fitwkb,
    "levels": run_levels,
}


def _write_outputs(out_dir: Path, outputs, cfg: RunConfig, command, params):
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for name, obj in outputs:
        obj.to_csv(out_dir / f"{name}.csv")
        obj.to_json(out_dir / f"{name}.json")
        files += [f"{name}.csv", f"{name}.json"]
    _write_json(out_dir / "manifest.json", {
        "command": command,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "version": __version__,
        "parameters": params,
        "outputs": files,
    })
    return files


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: bundled reference device)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads (default: $DOTSIM_THREADS or 1)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path config override, e.g. noise.amplitude=0.3")
    common.add_argument("--name", help="output base name")
    common.add_argument("--j-target", type=float, dest="j_target", help="exchange target, GHz")
    common.add_argument("--delta", type=float, help="detuning, GHz")
    common.add_argument("--x", type=float, help="exchange-axis bias, mV")
    common.add_argument("--tmax", type=float, help="trace length, ns")
    common.add_argument("--dt", type=float, help="time step, ns")
    common.add_argument("--mode", choices=["analytic", "monte_carlo"])
    common.add_argument("--n-samples", type=int, dest="n_samples")
    common.add_argument("--evolve-time", type=float, dest="evolve_time")

    parser = argparse.ArgumentParser(prog="dotsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dotsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "rabi": "Rabi trace at one bias", "twofreq": "two-frequency mixture and its spectrum",
        "chevron": "Rabi traces versus detuning", "fingerprint": "P(500 ns) over detuning and exchange bias",
        "contour": "insensitivity along a constant-J contour", "ivj": "J and I along the symmetric axis",
        "calibrate": "recover control axes from stability maps", "stability": "synthetic stability map",
        "fitwkb": "fit the WKB barrier model to J(V)", "levels": "singlet energy levels and J",
    }
    for name in RUNNERS:
        sub.add_parser(name, parents=[common], help=helps[name])
    sub.add_parser("run", parents=[common], help="run the command named in experiment.command")
    return parser


_FLAG_KEYS = ("name", "j_target", "delta", "x", "tmax", "dt", "mode", "n_samples", "evolve_time")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg.raw["seed"] = args.seed
            cfg.seed = args.seed
        command = args.command
        if command == "run":
            command = cfg.experiment.get("command")
            if command not in RUNNERS:
                raise ConfigError(f"experiment.command must be one of {sorted(RUNNERS)}, got {command!r}")
        elif cfg.experiment.get("command", command) != command:
            # params in the config belong to a different command
            cfg.experiment = {}
        flags = {k: getattr(args, k) for k in _FLAG_KEYS if getattr(args, k) is not None}
        params = _params(cfg, command, flags)
        workers = args.threads or default_workers()
        try:
            outputs = RUNNERS[command](cfg, params, workers)
            status = 0
        except _PartialFailure as exc:
            outputs, status = exc.outputs, exc
        files = _write_outputs(Path(args.out), outputs, cfg, command, params)
        if status:
            print(f"dotsim: numerical failure in {status}", file=sys.stderr)
            return 2
        print("\n".join(str(Path(args.out) / f) for f in files))
        return 0
    except ConfigError as exc:
        print(f"dotsim: config error: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"dotsim: invalid parameters: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"dotsim: numerical failure in {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, CalibrationError) as exc:
        print(f"dotsim: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
