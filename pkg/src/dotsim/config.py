"""Run configuration: JSON loading, validation, overrides and object construction.

A config is one JSON document::

    {
      "device": {...},          # gates, lever arms (gate -> value maps), barrier, U
      "noise": {...},           # NoiseModel fields
      "correlation": {...},     # injected-noise correlation (Monte-Carlo)
      "generalized_correlation": {...},  # weighting used for I_generalized
      "frame": "truth" | "calibrate" | {"u_detuning": {...}, "u_exchange": {...}, "v0": {...}},
      "calibration": {...},     # stability-map windows used when frame == "calibrate"
      "seed": 1234,
      "experiment": {"command": "contour", "name": "fig4a", ...}
    }

Gate-indexed quantities are written as ``{"gate": value}`` maps; gates not
listed take 0 (or the documented default).
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .barrier import WkbBarrier
from .device import DEFAULT_GATES, ControlFrame, DeviceModel, reference_device
from .errors import DotsimError, DomainError
from .noise import GateCorrelation, NoiseModel

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "parse_config",
    "apply_overrides",
    "device_to_config",
    "bundled_configs",
    "bundled_config_path",
]

_TOP_KEYS = {"device", "noise", "correlation", "generalized_correlation", "frame",
             "calibration", "seed", "experiment", "description"}
_DEVICE_KEYS = {"preset", "cross", "gates", "l_delta", "l_barrier", "l_common", "v0", "barrier",
                "hubbard_u", "hubbard_u_t", "cell_size", "plungers", "exchange_gate"}
_NOISE_KEYS = {"amplitude", "kind", "t_avg", "white_level", "filter"}
_CORR_KEYS = {"kind", "weights", "matrix", "plunger_weight", "prefix"}
_CAL_KEYS = {"p1", "p2", "v_x1", "evolve_time"}


class ConfigError(DotsimError, ValueError):
    """Invalid configuration; carries an optional source line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class RunConfig:
    raw: dict
    device: DeviceModel
    noise: NoiseModel | None
    correlation: GateCorrelation
    generalized_correlation: GateCorrelation
    frame: object  # "truth", "calibrate" or ControlFrame
    calibration: dict
    seed: int | None
    experiment: dict
    text: str = ""

    @property
    def sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _line_of(text: str, key: str) -> int | None:
    """Best-effort line number of the first ``"key"`` occurrence."""
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _err(text, key, msg):
    return ConfigError(msg, _line_of(text, key))


def _check_keys(section: dict, allowed: set, where: str, text: str):
    if not isinstance(section, dict):
        raise _err(text, where.split(".")[-1], f"{where} must be an object")
    for k in section:
        if k not in allowed:
            raise _err(text, k, f"unknown key {k!r} in {where}")


def _gate_map(value, gates, where, text, default=0.0) -> np.ndarray:
    if value is None:
        return None
    if isinstance(value, list):
        if len(value) != len(gates):
            raise _err(text, where.split(".")[-1], f"{where} needs {len(gates)} entries")
        return np.asarray(value, float)
    if not isinstance(value, dict):
        raise _err(text, where.split(".")[-1], f"{where} must map gate names to numbers")
    out = np.full(len(gates), float(default))
    for g, x in value.items():
        if g not in gates:
            raise _err(text, g, f"unknown gate {g!r} in {where}")
        try:
            out[gates.index(g)] = float(x)
        except (TypeError, ValueError):
            raise _err(text, g, f"{where}.{g} must be a number") from None
    return out


def _number(section, key, where, text, default=None, positive=False):
    if key not in section or section[key] is None:
        return default
    x = section[key]
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise _err(text, key, f"{where}.{key} must be a number")
    if positive and not x > 0:
        raise _err(text, key, f"{where}.{key} must be positive")
    return float(x)


def _build_device(sec: dict, text: str) -> DeviceModel:
    _check_keys(sec, _DEVICE_KEYS, "device", text)
    if "preset" in sec:
        if sec["preset"] != "reference":
            raise _err(text, "preset", f"unknown device preset {sec['preset']!r}")
        extra = set(sec) - {"preset", "cross"}
        if extra:
            raise _err(text, sorted(extra)[0], "preset devices accept only 'cross'")
        return reference_device(_number(sec, "cross", "device", text, 0.1))
    gates = sec.get("gates", list(DEFAULT_GATES))
    if not isinstance(gates, list) or not all(isinstance(g, str) for g in gates):
        raise _err(text, "gates", "device.gates must be a list of names")
    if len(set(gates)) != len(gates):
        raise _err(text, "gates", "device.gates contains duplicates")
    for req in ("l_delta", "l_barrier", "barrier", "hubbard_u"):
        if req not in sec:
            raise ConfigError(f"device.{req} is required", _line_of(text, "device"))
    b = sec["barrier"]
    _check_keys(b, {"t0", "a", "b"}, "device.barrier", text)
    try:
        barrier = WkbBarrier(t0=_number(b, "t0", "device.barrier", text),
                             a=_number(b, "a", "device.barrier", text),
                             b=_number(b, "b", "device.barrier", text))
    except (DomainError, TypeError) as exc:
        raise _err(text, "barrier", f"device.barrier: {exc}") from None
    plungers = tuple(sec.get("plungers", ("P1", "P2")))
    exchange_gate = sec.get("exchange_gate", "X1")
    for g in (*plungers, exchange_gate):
        if g not in gates:
            raise _err(text, g, f"unknown gate {g!r} in device")
    try:
        return DeviceModel(
            gates=tuple(gates),
            l_delta=_gate_map(sec["l_delta"], gates, "device.l_delta", text),
            l_barrier=_gate_map(sec["l_barrier"], gates, "device.l_barrier", text),
            barrier=barrier,
            hubbard_u=_number(sec, "hubbard_u", "device", text, positive=True),
            v0=_gate_map(sec.get("v0"), gates, "device.v0", text),
            cell_size=_number(sec, "cell_size", "device", text, 200.0, positive=True),
            l_common=_gate_map(sec.get("l_common"), gates, "device.l_common", text),
            hubbard_u_t=_number(sec, "hubbard_u_t", "device", text, None, positive=True),
            plungers=plungers,
            exchange_gate=exchange_gate,
        )
    except DomainError as exc:
        raise _err(text, "device", f"device: {exc}") from None


def _build_noise(sec, text) -> NoiseModel | None:
    if sec is None:
        return None
    _check_keys(sec, _NOISE_KEYS, "noise", text)
    try:
        return NoiseModel(
            amplitude=_number(sec, "amplitude", "noise", text, 0.3),
            kind=sec.get("kind", "one_over_f"),
            t_avg=_number(sec, "t_avg", "noise", text, 1.0),
            white_level=_number(sec, "white_level", "noise", text, None),
            filter=sec.get("filter", "square_pulse"),
        )
    except DomainError as exc:
        raise _err(text, "noise", f"noise: {exc}") from None


def _build_corr(sec, gates, where, text, default: str) -> GateCorrelation:
    if sec is None:
        sec = {"kind": default}
    if isinstance(sec, str):
        sec = {"kind": sec}
    _check_keys(sec, _CORR_KEYS, where, text)
    kind = sec.get("kind", "weights" if "weights" in sec else "matrix" if "matrix" in sec else default)
    try:
        if kind == "identity":
            return GateCorrelation.identity(len(gates))
        if kind == "plunger":
            return GateCorrelation.geometric(gates, _number(sec, "plunger_weight", where, text, 0.25),
                                             sec.get("prefix", "P"))
        if kind == "weights":
            return GateCorrelation.from_weights(_gate_map(sec.get("weights", {}), gates,
                                                          f"{where}.weights", text, default=1.0))
        if kind == "matrix":
            m = np.asarray(sec.get("matrix"), float)
            if m.shape != (len(gates), len(gates)):
                raise _err(text, "matrix", f"{where}.matrix must be {len(gates)}x{len(gates)}")
            return GateCorrelation(m)
    except DomainError as exc:
        raise _err(text, where.split(".")[-1], f"{where}: {exc}") from None
    raise _err(text, "kind", f"unknown correlation kind {kind!r} in {where}")


def _build_frame(sec, gates, text):
    if sec is None or sec == "truth":
        return "truth"
    if sec == "calibrate":
        return "calibrate"
    if not isinstance(sec, dict):
        raise _err(text, "frame", "frame must be 'truth', 'calibrate' or an explicit frame object")
    _check_keys(sec, {"u_detuning", "u_exchange", "v0"}, "frame", text)
    try:
        return ControlFrame(
            u_detuning=_gate_map(sec.get("u_detuning", {}), gates, "frame.u_detuning", text),
            u_exchange=_gate_map(sec.get("u_exchange", {}), gates, "frame.u_exchange", text),
            v0=_gate_map(sec.get("v0", {}), gates, "frame.v0", text),
        )
    except DomainError as exc:
        raise _err(text, "frame", f"frame: {exc}") from None


def parse_config(doc: dict, text: str = "") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", 1)
    _check_keys(doc, _TOP_KEYS, "config", text)
    if "device" not in doc:
        raise ConfigError("config needs a 'device' section", 1)
    device = _build_device(doc["device"], text)
    gates = list(device.gates)
    cal = doc.get("calibration", {})
    _check_keys(cal, _CAL_KEYS, "calibration", text)
    seed = doc.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64):
        raise _err(text, "seed", "seed must be an integer in [0, 2^64)")
    exp = doc.get("experiment", {})
    if not isinstance(exp, dict):
        raise _err(text, "experiment", "experiment must be an object")
    return RunConfig(
        raw=doc,
        device=device,
        noise=_build_noise(doc.get("noise"), text),
        correlation=_build_corr(doc.get("correlation"), gates, "correlation", text, "identity"),
        generalized_correlation=_build_corr(doc.get("generalized_correlation"), gates,
                                            "generalized_correlation", text, "plunger"),
        frame=_build_frame(doc.get("frame"), gates, text),
        calibration=cal,
        seed=seed,
        experiment=exp,
        text=text,
    )


def _parse_value(s: str):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``path.to.key=value`` overrides; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        if not all(keys):
            raise ConfigError(f"override {item!r} has an empty key")
        node = doc
        for k in keys[:-1]:
            nxt = node.get(k)
            if nxt is None or isinstance(nxt, str):
                nxt = {}
                node[k] = nxt
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r}: {k!r} is not an object")
            node = nxt
        node[keys[-1]] = _parse_value(value)
    return doc


def load_config(path=None, overrides=()) -> RunConfig:
    """Read, override and validate a config file (bundled reference by default)."""
    if path is None:
        path = bundled_config_path("reference")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    return parse_config(apply_overrides(doc, overrides), text)


def device_to_config(d: DeviceModel) -> dict:
    def gm(arr):
        return {g: float(x) for g, x in zip(d.gates, arr) if x != 0}

    out = {
        "gates": list(d.gates),
        "hubbard_u": d.hubbard_u,
        "cell_size": d.cell_size,
        "barrier": {"t0": d.barrier.t0, "a": d.barrier.a, "b": d.barrier.b},
        "l_delta": gm(d.l_delta),
        "l_barrier": gm(d.l_barrier),
        "l_common": gm(d.l_common),
        "plungers": list(d.plungers),
        "exchange_gate": d.exchange_gate,
    }
    if np.any(d.v0):
        out["v0"] = gm(d.v0)
    if d.hubbard_u_t is not None:
        out["hubbard_u_t"] = d.hubbard_u_t
    return out


def bundled_configs() -> list[str]:
    root = resources.files("dotsim") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_config_path(name: str) -> Path:
    p = Path(str(resources.files("dotsim") / "configs" / f"{name}.json"))
    if not p.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return p
