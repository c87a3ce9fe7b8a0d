"""QBER-vs-distance model line and linear regression against measured data."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .infidelity import BandSpec, analytic_mean_infidelity


class QberFormatError(ValueError):
    """Malformed measured-QBER file."""


@dataclass(frozen=True)
class QberSeries:
    distances_km: np.ndarray
    qber: np.ndarray
    uncertainty: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.distances_km, dtype=float)
        q = np.asarray(self.qber, dtype=float)
        if d.ndim != 1 or d.shape != q.shape or len(d) < 2:
            raise QberFormatError("need at least two (distance, qber) points")
        if np.any(np.diff(d) <= 0):
            raise QberFormatError("distances must be strictly increasing")
        if np.any((q < 0) | (q > 0.5)):
            raise QberFormatError("qber values must lie in [0, 0.5]")
        object.__setattr__(self, "distances_km", d)
        object.__setattr__(self, "qber", q)
        if self.uncertainty is not None:
            object.__setattr__(self, "uncertainty", np.asarray(self.uncertainty, dtype=float))


def parse_qber_csv(source) -> QberSeries:
    """Parse ``distance_km,qber[,uncertainty]`` text or a path."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise QberFormatError("line 1: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["distance_km", "qber"] or header[2:] not in ([], ["uncertainty"]):
        raise QberFormatError(f"line 1: expected header distance_km,qber[,uncertainty], got {','.join(header)}")
    d, q, u = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise QberFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise QberFormatError(f"line {lineno}: {exc}") from exc
        d.append(vals[0])
        q.append(vals[1])
        if len(vals) == 3:
            u.append(vals[2])
    try:
        return QberSeries(np.array(d), np.array(q), np.array(u) if u else None)
    except QberFormatError as exc:
        raise QberFormatError(f"{exc} (data lines 2-{len(rows)})") from exc


def model_line(pmd_coeff: float, band: BandSpec, distances_km, baseline: float = 0.0) -> np.ndarray:
    """Ensemble small-angle PMD infidelity at each distance plus a constant offset."""
    return np.array([analytic_mean_infidelity(pmd_coeff, float(L), band) for L in distances_km]) + baseline


@dataclass(frozen=True)
class Regression:
    slope: float
    intercept: float
    r: float
    n: int


def linear_regression(x, y) -> Regression:
    """Least-squares line y = slope x + intercept and Pearson correlation R."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    r = float(np.corrcoef(x, y)[0, 1]) if np.std(y) > 0 else 0.0
    return Regression(float(slope), float(intercept), r, len(x))
