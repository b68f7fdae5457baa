"""Containers for simulated data and their CSV / JSON serialisation.

CSV dialect: comma separated, ``.`` decimal, one header row, LF line endings.
Floats are written with ``repr`` so identical inputs give identical bytes.
JSON documents follow ``{"axes", "units", "data", "metadata"}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Axis", "TimeTrace", "ScanGrid", "Table", "to_jsonable", "fmt"]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def to_jsonable(obj):
    """Recursively convert numpy containers and scalars to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan; keep them readable as strings
        if math.isnan(x) or math.isinf(x):
            return fmt(x)
        return x
    return obj


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(to_jsonable(doc), fh, indent=1, sort_keys=True)
        fh.write("\n")


@dataclass
class Axis:
    name: str
    unit: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, float)

    @property
    def label(self) -> str:
        return f"{self.name} [{self.unit}]"


@dataclass
class TimeTrace:
    times: np.ndarray  # ns
    p_singlet: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.p_singlet = np.asarray(self.p_singlet, float)
        if self.times.shape != self.p_singlet.shape or self.times.ndim != 1:
            raise ValueError("times and p_singlet must be 1D arrays of equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def is_uniform(self, rtol: float = 1e-6) -> bool:
        d = np.diff(self.times)
        return bool(len(d) > 0 and np.allclose(d, d[0], rtol=rtol, atol=0))

    def to_csv(self, path):
        _write_csv(path, ["time [ns]", "p_singlet"], zip(self.times, self.p_singlet))

    def to_json(self, path):
        _write_json(path, {
            "axes": {"time": self.times},
            "units": {"time": "ns", "p_singlet": "probability"},
            "data": self.p_singlet,
            "metadata": self.metadata,
        })


@dataclass
class ScanGrid:
    """2D map; ``data[i, j]`` belongs to ``y.values[i]`` and ``x.values[j]``."""

    x: Axis
    y: Axis
    data: np.ndarray
    quantity: str = "p_singlet"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, float)
        if self.data.shape != (len(self.y.values), len(self.x.values)):
            raise ValueError(
                f"data shape {self.data.shape} does not match axes "
                f"({len(self.y.values)}, {len(self.x.values)})"
            )

    def to_csv(self, path):
        rows = (
            (yv, xv, self.data[i, j])
            for i, yv in enumerate(self.y.values)
            for j, xv in enumerate(self.x.values)
        )
        _write_csv(path, [self.y.label, self.x.label, self.quantity], rows)

    def to_json(self, path):
        _write_json(path, {
            "axes": {"x": {"name": self.x.name, "values": self.x.values},
                     "y": {"name": self.y.name, "values": self.y.values}},
            "units": {self.x.name: self.x.unit, self.y.name: self.y.unit,
                      self.quantity: "probability"},
            "data": self.data,
            "metadata": self.metadata,
        })

    @classmethod
    def from_json(cls, path) -> "ScanGrid":
        doc = json.loads(Path(path).read_text())
        ax, units = doc["axes"], doc["units"]
        x = Axis(ax["x"]["name"], units[ax["x"]["name"]], ax["x"]["values"])
        y = Axis(ax["y"]["name"], units[ax["y"]["name"]], ax["y"]["values"])
        return cls(x=x, y=y, data=np.array(doc["data"], float), metadata=doc["metadata"])


@dataclass
class Table:
    """Column-oriented result table (contour sweeps, I-vs-J, level diagrams)."""

    columns: dict
    units: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("all columns must have the same length")

    def __getitem__(self, key):
        return np.asarray(self.columns[key])

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def _labels(self):
        return [f"{k} [{self.units[k]}]" if self.units.get(k) else k for k in self.columns]

    def to_csv(self, path):
        _write_csv(path, self._labels(), zip(*self.columns.values()))

    def to_json(self, path):
        _write_json(path, {
            "axes": {"row": list(range(len(self)))},
            "units": self.units,
            "data": self.columns,
            "metadata": self.metadata,
        })
