"""Gate-voltage model of a double dot and the symmetric-axis calibration.

Gate voltages are plain ``numpy`` vectors ordered like ``DeviceModel.gates``
(mV).  Three linear functionals of ``v - v0`` drive the physics:

* detuning ``Δ = l_delta · (v - v0)`` in GHz,
* effective barrier voltage ``l_barrier · (v - v0)`` in mV, fed to the WKB model,
* common-mode voltage ``l_common · (v - v0)`` in mV, which only sets where
  the (1,1) cell closes towards (1,0)/(0,1) and (2,1)/(1,2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .barrier import WkbBarrier, tc_of_voltage
from .data import Axis, ScanGrid
from .errors import CalibrationError, DomainError
from .hubbard import exchange_exact_array

__all__ = [
    "DEFAULT_GATES",
    "DeviceModel",
    "ControlFrame",
    "ContourPoint",
    "reference_device",
    "control_params",
    "exchange_of_voltages",
    "exchange_batch",
    "grad_j",
    "true_frame",
    "constant_j_contour",
    "synth_stability_map",
    "calibrate_axes",
    "angle_between",
]

DEFAULT_GATES = ("P1", "P2", "P3", "X1", "X2", "T1", "T2")

RABI_CONTRAST = 0.75  # sin^2(120 deg)


@dataclass(frozen=True, eq=False)
class DeviceModel:
    gates: tuple
    l_delta: np.ndarray  # GHz/mV
    l_barrier: np.ndarray  # dimensionless
    barrier: WkbBarrier
    hubbard_u: float
    v0: np.ndarray = None
    cell_size: float = 200.0  # mV, (1,1) cell width along the common-mode axis
    l_common: np.ndarray = None  # dimensionless
    hubbard_u_t: float | None = None
    plungers: tuple = ("P1", "P2")
    exchange_gate: str = "X1"

    def __post_init__(self):
        gates = tuple(self.gates)
        if not gates:
            raise DomainError("gate list is empty")
        if len(set(gates)) != len(gates):
            raise DomainError(f"gate names are not unique: {gates}")
        object.__setattr__(self, "gates", gates)
        n = len(gates)
        for name in ("l_delta", "l_barrier"):
            arr = np.asarray(getattr(self, name), float)
            if arr.shape != (n,):
                raise DomainError(f"{name} needs {n} entries, got shape {arr.shape}")
            object.__setattr__(self, name, arr)
        v0 = np.zeros(n) if self.v0 is None else np.asarray(self.v0, float)
        if v0.shape != (n,):
            raise DomainError(f"v0 needs {n} entries")
        object.__setattr__(self, "v0", v0)
        for g in (*self.plungers, self.exchange_gate):
            if g not in gates:
                raise DomainError(f"gate {g!r} is not in the gate list")
        if self.l_common is None:
            lc = np.zeros(n)
            lc[[self.index(g) for g in self.plungers]] = 1.0 / np.sqrt(2.0)
        else:
            lc = np.asarray(self.l_common, float)
            if lc.shape != (n,):
                raise DomainError(f"l_common needs {n} entries")
        object.__setattr__(self, "l_common", lc)
        p1, p2 = (self.index(g) for g in self.plungers)
        if not (self.l_delta[p1] > 0 and self.l_delta[p2] < 0):
            raise DomainError("lever arms must satisfy l_delta[P1] > 0 > l_delta[P2]")
        if not self.hubbard_u > 0:
            raise DomainError("hubbard_u must be positive")
        if not self.cell_size > 0:
            raise DomainError("cell_size must be positive")

    def index(self, gate: str) -> int:
        try:
            return self.gates.index(gate)
        except ValueError:
            raise DomainError(f"unknown gate {gate!r}") from None

    @property
    def alpha(self) -> float:
        return float(self.l_delta[self.index(self.plungers[0])])

    def vector(self, values=None, **kw) -> np.ndarray:
        """GateVector from a ``{gate: mV}`` mapping; missing gates take ``v0``."""
        v = self.v0.copy()
        for g, x in {**(values or {}), **kw}.items():
            v[self.index(g)] = x
        return v

    def unit(self, gate: str) -> np.ndarray:
        e = np.zeros(len(self.gates))
        e[self.index(gate)] = 1.0
        return e

    def check(self, v) -> np.ndarray:
        v = np.asarray(v, float)
        if v.shape[-1] != len(self.gates):
            raise DomainError(f"gate vector has {v.shape[-1]} entries, device has {len(self.gates)}")
        if not np.all(np.isfinite(v)):
            raise DomainError("gate vector contains non-finite values")
        return v

    def detuning(self, v):
        return (self.check(v) - self.v0) @ self.l_delta

    def barrier_voltage(self, v):
        return (self.check(v) - self.v0) @ self.l_barrier

    def common_mode(self, v):
        return (self.check(v) - self.v0) @ self.l_common

    def in_cell(self, v):
        return (np.abs(self.detuning(v)) < self.hubbard_u) & (
            np.abs(self.common_mode(v)) < self.cell_size / 2
        )


def reference_device(cross: float = 0.1) -> DeviceModel:
    """Seven-gate scaffolding device used throughout the tests and bundled configs.

    ``cross`` scales every capacitive cross-term relative to the direct lever
    arm.  The barrier weight on X1 is 0.1, i.e. the exchange gate acts on the
    tunnelling action with a much weaker lever arm than the plungers act on
    the dot potentials.
    """
    alpha = 0.1
    g = {k: i for i, k in enumerate(DEFAULT_GATES)}
    l_delta = np.zeros(7)
    l_delta[g["P1"]] = alpha
    l_delta[g["P2"]] = -alpha
    l_delta[g["P3"]] = -cross * alpha
    l_delta[g["X2"]] = -cross * alpha
    l_delta[g["T1"]] = cross * alpha
    l_barrier = np.zeros(7)
    l_barrier[g["X1"]] = 0.1
    l_barrier[g["P1"]] = l_barrier[g["P2"]] = cross * 0.1
    l_common = np.zeros(7)
    l_common[g["P1"]] = l_common[g["P2"]] = 1.0 / np.sqrt(2.0)
    l_common[g["X1"]] = cross
    l_common[g["P3"]] = l_common[g["T1"]] = cross / 2
    return DeviceModel(
        gates=DEFAULT_GATES,
        l_delta=l_delta,
        l_barrier=l_barrier,
        barrier=WkbBarrier(t0=5.0, a=3.0, b=0.05),
        hubbard_u=20.0,
        cell_size=200.0,
        l_common=l_common,
    )


def control_params(d: DeviceModel, v) -> tuple[float, float]:
    """Hubbard control parameters ``(Δ, t_c)`` in GHz at gate bias ``v``."""
    v = d.check(v)
    return float(d.detuning(v)), float(tc_of_voltage(d.barrier, d.barrier_voltage(v)))


def exchange_batch(d: DeviceModel, vs, check: bool = True) -> np.ndarray:
    """Exact exchange for a stack of gate vectors with shape ``(..., n_gates)``."""
    vs = d.check(vs)
    delta = d.detuning(vs)
    if check and np.any(np.abs(delta) >= d.hubbard_u):
        bad = float(np.max(np.abs(delta)))
        raise DomainError(f"detuning |Δ|={bad:.4g} GHz leaves the (1,1) cell (U={d.hubbard_u})")
    tc = tc_of_voltage(d.barrier, d.barrier_voltage(vs))
    return exchange_exact_array(d.hubbard_u, tc, delta)


def exchange_of_voltages(d: DeviceModel, v) -> float:
    return float(exchange_batch(d, np.asarray(v, float)))


def grad_j(d: DeviceModel, v, step: float = 0.01) -> np.ndarray:
    """Central-difference gradient dJ/dV_j in GHz/mV."""
    v = d.check(v)
    eye = np.eye(len(d.gates)) * step
    js = exchange_batch(d, np.concatenate([v + eye, v - eye]))
    n = len(d.gates)
    return (js[:n] - js[n:]) / (2.0 * step)


@dataclass(frozen=True, eq=False)
class ControlFrame:
    """Calibrated control axes ``V = v0 + u_detuning*s + u_exchange*x``."""

    u_detuning: np.ndarray
    u_exchange: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        for name in ("u_detuning", "u_exchange", "v0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        for name in ("u_detuning", "u_exchange"):
            norm = np.linalg.norm(getattr(self, name))
            if not np.isclose(norm, 1.0, atol=1e-9):
                raise DomainError(f"{name} must have unit norm, got {norm}")

    @property
    def orthogonality(self) -> float:
        return float(abs(self.u_detuning @ self.u_exchange))

    def point(self, d: DeviceModel, delta: float, x: float) -> np.ndarray:
        """Bias at physical detuning ``delta`` (GHz) and exchange-axis offset ``x`` (mV).

        The displacement along ``u_detuning`` is solved so the device detuning
        equals ``delta`` exactly; this is ``Δ/α`` with α the lever arm along
        the calibrated detuning axis.
        """
        base = self.v0 + self.u_exchange * x
        alpha_eff = float(d.l_delta @ self.u_detuning)
        if abs(alpha_eff) < 1e-12:
            raise DomainError("detuning axis has no detuning lever arm")
        s = (delta - float(d.detuning(base))) / alpha_eff
        return base + self.u_detuning * s

    def as_dict(self, gates) -> dict:
        return {
            "u_detuning": dict(zip(gates, self.u_detuning.tolist())),
            "u_exchange": dict(zip(gates, self.u_exchange.tolist())),
            "v0": dict(zip(gates, self.v0.tolist())),
        }


def _plane_indices(d: DeviceModel):
    p1, p2 = (d.index(g) for g in d.plungers)
    return p1, p2, d.index(d.exchange_gate)


def true_frame(d: DeviceModel) -> ControlFrame:
    """Ground-truth axes implied by the device lever arms.

    ``u_detuning`` is normal to the (2,0)/(0,2) boundaries within the plunger
    plane; ``u_exchange`` follows the (1,1) cell centre as the exchange gate
    is raised, so it changes neither Δ nor the common mode.
    """
    p1, p2, x1 = _plane_indices(d)
    n = len(d.gates)
    ud = np.zeros(n)
    ud[[p1, p2]] = d.l_delta[[p1, p2]]
    ud /= np.linalg.norm(ud)
    m = np.array([[d.l_delta[p1], d.l_delta[p2]], [d.l_common[p1], d.l_common[p2]]])
    rhs = -np.array([d.l_delta[x1], d.l_common[x1]])
    dp = np.linalg.solve(m, rhs)
    ue = np.zeros(n)
    ue[[p1, p2, x1]] = [dp[0], dp[1], 1.0]
    ue /= np.linalg.norm(ue)
    return ControlFrame(u_detuning=ud, u_exchange=ue, v0=d.v0.copy())


@dataclass
class ContourPoint:
    delta: float
    x: float
    v: np.ndarray
    j: float
    ok: bool = True
    message: str = ""


def constant_j_contour(d: DeviceModel, frame: ControlFrame, j_target: float, deltas,
                       x_bounds=(0.0, 1500.0), rtol: float = 1e-6,
                       max_iter: int = 200) -> list[ContourPoint]:
    """Exchange-axis biases where ``J = j_target`` at each requested detuning.

    Bisection on ``x`` (J increases monotonically along the exchange axis).
    Points where the target is not bracketed by ``x_bounds`` come back with
    ``ok=False``; the others are still returned.
    """
    if not j_target > 0:
        raise DomainError("j_target must be positive")
    out = []
    for delta in np.asarray(deltas, float):
        def j_at(x):
            return exchange_of_voltages(d, frame.point(d, delta, x))

        lo, hi = map(float, x_bounds)
        try:
            j_lo, j_hi = j_at(lo), j_at(hi)
        except DomainError as exc:
            out.append(ContourPoint(float(delta), np.nan, None, np.nan, False, str(exc)))
            continue
        if not (j_lo <= j_target <= j_hi):
            out.append(ContourPoint(
                float(delta), np.nan, None, np.nan, False,
                f"target {j_target} GHz not bracketed: J in [{j_lo:.4g}, {j_hi:.4g}]",
            ))
            continue
        x, j = lo, j_lo
        for _ in range(max_iter):
            x = 0.5 * (lo + hi)
            j = j_at(x)
            if abs(j - j_target) < rtol * j_target:
                break
            if j < j_target:
                lo = x
            else:
                hi = x
        ok = abs(j - j_target) < rtol * j_target
        out.append(ContourPoint(float(delta), x, frame.point(d, delta, x), j, ok,
                                "" if ok else "bisection did not converge"))
    return out


def synth_stability_map(d: DeviceModel, p1_values, p2_values, v_x1: float,
                        evolve_time: float = 200.0, base=None) -> ScanGrid:
    """Singlet probability over the P1/P2 plane at fixed exchange-gate voltage.

    Inside the (1,1) cell the pixel shows a noiseless exchange oscillation
    after ``evolve_time`` ns; outside it saturates at 1.0, standing in for
    the blockaded charge boundaries.
    """
    p1, p2, x1 = _plane_indices(d)
    p1_values = np.asarray(p1_values, float)
    p2_values = np.asarray(p2_values, float)
    v = d.v0.copy() if base is None else d.check(base).copy()
    v[x1] = v_x1
    vs = np.broadcast_to(v, (len(p2_values), len(p1_values), len(v))).copy()
    vs[..., p1] = p1_values[None, :]
    vs[..., p2] = p2_values[:, None]
    inside = d.in_cell(vs)
    prob = np.ones(inside.shape)
    j = exchange_batch(d, vs[inside], check=False)
    prob[inside] = 1.0 - RABI_CONTRAST / 2 * (1.0 - np.cos(2 * np.pi * j * evolve_time))
    return ScanGrid(
        x=Axis(d.plungers[0], "mV", p1_values),
        y=Axis(d.plungers[1], "mV", p2_values),
        data=prob,
        metadata={
            "gates": list(d.gates),
            "base": v.tolist(),
            "exchange_gate": d.exchange_gate,
            "v_x1": float(v_x1),
            "evolve_time_ns": float(evolve_time),
        },
    )


def _cell_mask(grid: ScanGrid, threshold: float) -> np.ndarray:
    interior = grid.data < threshold
    labels, n = ndimage.label(interior)
    if n == 0:
        raise CalibrationError("no (1,1) cell found: every pixel is saturated")
    sizes = ndimage.sum(interior, labels, index=np.arange(1, n + 1))
    mask = labels == (1 + int(np.argmax(sizes)))
    mask = ndimage.binary_fill_holes(mask)
    if mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any():
        raise CalibrationError("(1,1) cell is not closed inside the scanned window")
    if mask.sum() < 16:
        raise CalibrationError("(1,1) cell is too small to locate")
    return mask


def _cell_geometry(grid: ScanGrid, threshold: float):
    """Return the cell centre (P1, P2) and the unit normal of the (2,0)/(0,2) edges."""
    mask = _cell_mask(grid, threshold)
    xs, ys = grid.x.values, grid.y.values
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    centre = np.array([xx[mask].mean(), yy[mask].mean()])

    smooth = ndimage.gaussian_filter(mask.astype(float), 1.5)
    gy, gx = np.gradient(smooth, ys, xs)
    edge = mask & ~ndimage.binary_erosion(mask)
    normals = -np.stack([gx[edge], gy[edge]], axis=1)
    norms = np.linalg.norm(normals, axis=1)
    keep = norms > 0
    normals = normals[keep] / norms[keep, None]
    pts = np.stack([xx[edge], yy[edge]], axis=1)[keep]

    # (2,0)/(0,2) edges face roughly along (1,-1); the common-mode edges along (1,1)
    anti = normals @ np.array([1.0, -1.0]) / np.sqrt(2.0)
    diag = normals @ np.array([1.0, 1.0]) / np.sqrt(2.0)
    sel = np.abs(anti) > np.abs(diag)
    groups = [pts[sel & (anti > 0)], pts[sel & (anti < 0)]]
    if any(len(g) < 4 for g in groups):
        raise CalibrationError("could not find both (2,0) and (0,2) boundaries")

    pixel = float(max(np.median(np.abs(np.diff(xs))), np.median(np.abs(np.diff(ys)))))
    direction = _shared_direction(groups)
    for _ in range(3):
        trimmed = []
        for g in groups:
            c = g.mean(axis=0)
            along = (g - c) @ direction
            perp = (g - c) @ np.array([-direction[1], direction[0]])
            span = np.ptp(along)
            ok = (np.abs(perp - np.median(perp)) <= 1.5 * pixel) & (
                np.abs(along - np.median(along)) <= 0.4 * span
            )
            trimmed.append(g[ok] if ok.sum() >= 4 else g)
        direction = _shared_direction(trimmed)
    normal = np.array([direction[1], -direction[0]])
    if normal[0] < 0:
        normal = -normal
    return centre, normal


def _shared_direction(groups) -> np.ndarray:
    # total least squares for parallel lines: centre each group separately
    stacked = np.concatenate([g - g.mean(axis=0) for g in groups])
    _, vecs = np.linalg.eigh(stacked.T @ stacked)
    return vecs[:, -1]


def calibrate_axes(map_lo: ScanGrid, map_hi: ScanGrid, threshold: float = 1.0 - 1e-9) -> ControlFrame:
    """Recover the detuning and symmetric (exchange) axes from two stability maps.

    Both maps must come from :func:`synth_stability_map` (or carry the same
    metadata) at different exchange-gate voltages.  Saturated pixels
    (``>= threshold``) mark the outside of the (1,1) cell.
    """
    meta = map_lo.metadata
    gates = list(meta["gates"])
    if list(map_hi.metadata["gates"]) != gates:
        raise CalibrationError("maps were taken on different gate sets")
    x_lo, x_hi = float(meta["v_x1"]), float(map_hi.metadata["v_x1"])
    if x_lo == x_hi:
        raise CalibrationError("maps must be taken at different exchange-gate voltages")
    c_lo, n_lo = _cell_geometry(map_lo, threshold)
    c_hi, n_hi = _cell_geometry(map_hi, threshold)

    i1, i2 = gates.index(map_lo.x.name), gates.index(map_lo.y.name)
    ix = gates.index(meta["exchange_gate"])
    n = len(gates)
    ue = np.zeros(n)
    ue[[i1, i2, ix]] = [c_hi[0] - c_lo[0], c_hi[1] - c_lo[1], x_hi - x_lo]
    ue /= np.linalg.norm(ue)
    if ue[ix] < 0:
        ue = -ue
    normal = n_lo + n_hi
    normal /= np.linalg.norm(normal)
    ud = np.zeros(n)
    ud[[i1, i2]] = normal
    v0 = np.array(meta["base"], float)
    v0[[i1, i2, ix]] = [c_lo[0], c_lo[1], x_lo]
    return ControlFrame(u_detuning=ud, u_exchange=ue, v0=v0)


def angle_between(a, b) -> float:
    """Angle in degrees between two directions (sign-insensitive)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    c = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(min(1.0, c))))
