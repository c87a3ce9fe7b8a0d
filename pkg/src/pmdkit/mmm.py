"""Mueller Matrix Method: DGD and PSP spectra from polarimeter frequency scans.

Two launched states with perpendicular Stokes vectors fix the channel's
Stokes rotation at every wavelength (up to measurement noise).  The rotation
increment between neighbouring wavelengths gives the PMD vector.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .fiber import (
    FiberRealization,
    SpectralGrid,
    pmd_vectors_from_rotations,
    stokes_rotations,
)
from .polarization import NAMED_STATES, PolRotation, StokesVector, jones_to_stokes

SCAN_HEADER = ["wavelength_nm", "state_label", "s1", "s2", "s3"]
DOP_MIN, DOP_MAX = 0.95, 1.05
PERP_TOL = 1e-6
MIN_FRAME_ANGLE = np.deg2rad(5.0)


class ScanFormatError(ValueError):
    pass


class DegenerateFrameError(ValueError):
    pass


@dataclass(frozen=True)
class ScanRecord:
    wavelength: float
    state_label: str
    stokes: StokesVector


@dataclass(frozen=True, eq=False)
class ScanSet:
    """Scan records grouped by wavelength.

    ``outputs[label]`` is an (M, 3) array of unit Stokes vectors aligned with
    ``wavelengths``; ``inputs[label]`` is the declared launched Stokes vector.
    """

    wavelengths: np.ndarray
    outputs: dict
    inputs: dict

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        if len(wl) < 2 or np.any(np.diff(wl) <= 0):
            raise ScanFormatError("scan needs >= 2 strictly increasing wavelengths")
        labels = list(self.outputs)
        if len(labels) < 2:
            raise ScanFormatError("scan needs at least two launched states")
        for lab in labels:
            if lab not in self.inputs:
                raise ScanFormatError(f"no declared input Stokes vector for state {lab!r}")
            if np.shape(self.outputs[lab]) != (len(wl), 3):
                raise ScanFormatError(f"state {lab!r} is not measured at every wavelength")
        if not self.pairs():
            raise ScanFormatError(
                "declared inputs contain no Stokes-perpendicular pair: "
                + ", ".join(f"{a}.{b}={np.dot(self.inputs[a], self.inputs[b]):.3g}"
                            for a, b in combinations(labels, 2))
            )
        if len(labels) == 2 and len(self.pairs()) != 1:
            raise ScanFormatError("the two declared inputs are not perpendicular")

    @property
    def labels(self) -> list[str]:
        return list(self.outputs)

    def __len__(self):
        return len(self.wavelengths)

    def pairs(self) -> list[tuple[str, str]]:
        """Launched-state pairs usable for frame reconstruction."""
        return [
            (a, b)
            for a, b in combinations(self.outputs, 2)
            if abs(np.dot(self.inputs[a], self.inputs[b])) < PERP_TOL
        ]

    def records(self):
        for i, wl in enumerate(self.wavelengths):
            for lab in self.outputs:
                yield ScanRecord(float(wl), lab, StokesVector.from_array(self.outputs[lab][i]))


@dataclass(frozen=True)
class DGDRecord:
    wavelength: float
    dgd: float
    psp: StokesVector
    psp_defined: bool = True


@dataclass(frozen=True)
class DGDReport:
    records: list
    pair: tuple
    mean_dgd: float
    std_dgd: float
    delta_lambda0: float | None

    def summary(self) -> dict:
        return {
            "pair": list(self.pair),
            "n_intervals": len(self.records),
            "mean_dgd_ps": self.mean_dgd,
            "std_dgd_ps": self.std_dgd,
            "delta_lambda0_nm": self.delta_lambda0,
        }


def default_inputs(labels) -> dict:
    return {
        lab: jones_to_stokes(NAMED_STATES[lab]).array for lab in labels if lab in NAMED_STATES
    }


def load_declared_inputs(path) -> dict:
    """Declared launched states from JSON ``{"H": [1, 0, 0], ...}``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_declared_inputs(doc)


def parse_declared_inputs(doc) -> dict:
    out = {}
    for lab, vec in dict(doc).items():
        v = np.asarray(vec, dtype=float).reshape(-1)
        if v.shape != (3,) or abs(np.linalg.norm(v) - 1) > 1e-6:
            raise ScanFormatError(f"declared input {lab!r} must be a unit 3-vector")
        out[str(lab)] = v / np.linalg.norm(v)
    return out


def _open_source(source):
    if hasattr(source, "read"):
        return source, False
    if isinstance(source, os.PathLike) or (isinstance(source, str) and source and "\n" not in source):
        return open(source, encoding="utf-8", newline=""), True
    return io.StringIO(source), False


def parse_scan(source, declared_inputs: dict | None = None) -> ScanSet:
    """Read a ``wavelength_nm,state_label,s1,s2,s3`` CSV into a validated ScanSet.

    ``source`` is a path, a file object or the CSV text itself.  Stokes
    vectors whose norm (DOP) lies in [0.95, 1.05] are renormalized; anything
    else is rejected with the offending line number.
    """
    fh, close = _open_source(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ScanFormatError("empty scan file") from None
        if header != SCAN_HEADER:
            raise ScanFormatError(f"line 1: expected header {','.join(SCAN_HEADER)}, got {','.join(header)}")
        groups: dict[float, dict[str, np.ndarray]] = {}
        order: list[str] = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ScanFormatError(f"line {line}: expected 5 fields, got {len(row)}")
            try:
                wl = float(row[0])
                s = np.array([float(x) for x in row[2:]])
            except ValueError as exc:
                raise ScanFormatError(f"line {line}: {exc}") from None
            label = row[1].strip()
            if not label:
                raise ScanFormatError(f"line {line}: empty state label")
            if not np.all(np.isfinite(s)) or not np.isfinite(wl):
                raise ScanFormatError(f"line {line}: non-finite value")
            norm = np.linalg.norm(s)
            if not DOP_MIN <= norm <= DOP_MAX:
                raise ScanFormatError(
                    f"line {line}: Stokes norm {norm:.4f} outside [{DOP_MIN}, {DOP_MAX}]"
                )
            if abs(norm - 1) > 1e-12:
                s = s / norm
            group = groups.setdefault(wl, {})
            if label in group:
                raise ScanFormatError(f"line {line}: duplicate state {label!r} at {wl} nm")
            group[label] = s
            if label not in order:
                order.append(label)
    finally:
        if close:
            fh.close()
    if not groups:
        raise ScanFormatError("scan contains no records")
    wls = sorted(groups)
    for wl in wls:
        missing = [lab for lab in order if lab not in groups[wl]]
        if missing:
            raise ScanFormatError(f"state(s) {', '.join(missing)} missing at {wl} nm")
    inputs = default_inputs(order)
    if declared_inputs:
        inputs.update(declared_inputs)
    outputs = {lab: np.array([groups[wl][lab] for wl in wls]) for lab in order}
    return ScanSet(np.array(wls), outputs, inputs)


def scan_to_csv(scan: ScanSet) -> str:
    """Serialize with round-trip float formatting (parse_scan inverts it exactly)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_HEADER)
    for i, wl in enumerate(scan.wavelengths):
        for lab in scan.labels:
            w.writerow([repr(float(wl)), lab] + [repr(float(x)) for x in scan.outputs[lab][i]])
    return buf.getvalue()


def synthesize_scan(
    fiber: FiberRealization,
    grid: SpectralGrid,
    labels=("H", "D", "R"),
    noise: float = 0.0,
    seed: int = 0,
    declared_inputs: dict | None = None,
) -> ScanSet:
    """Polarimeter scan of an emulated fiber, optionally with Gaussian Stokes noise."""
    inputs = default_inputs(labels)
    if declared_inputs:
        inputs.update(declared_inputs)
    rot = stokes_rotations(fiber, grid.wavelengths)
    rng = np.random.default_rng(seed)
    outputs = {}
    for lab in labels:
        out = rot @ inputs[lab]
        if noise:
            out = out + noise * rng.standard_normal(out.shape)
            out /= np.linalg.norm(out, axis=1, keepdims=True)
        outputs[lab] = out
    return ScanSet(grid.wavelengths.copy(), outputs, {k: inputs[k] for k in labels})


def _frames(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Right-handed orthonormal frames (columns) from vector pairs (..., 3)."""
    e1 = a / np.linalg.norm(a, axis=-1, keepdims=True)
    e2 = b - np.sum(b * e1, axis=-1, keepdims=True) * e1
    e2 /= np.linalg.norm(e2, axis=-1, keepdims=True)
    return np.stack([e1, e2, np.cross(e1, e2)], axis=-1)


def _rotations_from_outputs(oa, ob, ia, ib, wavelengths, labels=("a", "b")) -> np.ndarray:
    sin_ab = np.linalg.norm(np.cross(oa, ob), axis=-1)
    bad = np.nonzero(sin_ab < np.sin(MIN_FRAME_ANGLE))[0]
    if len(bad):
        raise DegenerateFrameError(
            f"outputs of {labels[0]} and {labels[1]} are nearly collinear at "
            f"{wavelengths[bad[0]]} nm"
        )
    return _frames(oa, ob) @ _frames(ia, ib).T


def _check_pair(scan: ScanSet, pair):
    a, b = pair
    if (a, b) not in scan.pairs() and (b, a) not in scan.pairs():
        raise ValueError(f"pair {pair} is not a perpendicular launched-state pair")


def _frame_rotations(scan: ScanSet, pair) -> np.ndarray:
    _check_pair(scan, pair)
    a, b = pair
    return _rotations_from_outputs(
        scan.outputs[a], scan.outputs[b], scan.inputs[a], scan.inputs[b], scan.wavelengths, pair
    )


def output_frame(scan: ScanSet, wavelength: float, pair=None) -> PolRotation:
    """Channel rotation at ``wavelength`` reconstructed from one launched pair.

    The two output Stokes vectors are Gram-Schmidt orthonormalized, so the
    result is an exact rotation even for noisy data.
    """
    pair = tuple(pair or scan.pairs()[0])
    _check_pair(scan, pair)
    idx = np.nonzero(np.isclose(scan.wavelengths, wavelength, rtol=0, atol=1e-9))[0]
    if not len(idx):
        raise KeyError(f"{wavelength} nm not in scan")
    i = int(idx[0])
    a, b = pair
    r = _rotations_from_outputs(
        scan.outputs[a][i : i + 1], scan.outputs[b][i : i + 1], scan.inputs[a], scan.inputs[b],
        scan.wavelengths[i : i + 1], pair,
    )
    return PolRotation(r[0])


def dgd_from_rotations(r_a: PolRotation, wl_a: float, r_b: PolRotation, wl_b: float) -> DGDRecord:
    if wl_a == wl_b:
        raise ValueError("the two wavelengths must differ")
    rots = np.stack([r_a.matrix, r_b.matrix])
    mid, vec = pmd_vectors_from_rotations(rots, np.array([wl_a, wl_b], dtype=float))
    return _record(mid[0], vec[0])


def _record(wl, vec) -> DGDRecord:
    dgd = float(np.linalg.norm(vec))
    if dgd > 0:
        return DGDRecord(float(wl), dgd, StokesVector.from_array(vec / dgd), True)
    return DGDRecord(float(wl), 0.0, StokesVector(1.0, 0.0, 0.0), False)


def dgd_series(scan: ScanSet, pair=None) -> list[DGDRecord]:
    pair = tuple(pair or scan.pairs()[0])
    mid, vecs = pmd_vectors_from_rotations(_frame_rotations(scan, pair), scan.wavelengths)
    return [_record(w, v) for w, v in zip(mid, vecs)]


def oscillation_half_period(wavelengths, values, rel_tol: float = 1e-9) -> float | None:
    """Mean spacing between successive local extrema of a sampled curve.

    Steps smaller than ``rel_tol`` times the curve's scale are treated as
    flat so rounding noise on a constant curve yields no extrema.  Returns
    None when fewer than 3 extrema are found.
    """
    wl = np.asarray(wavelengths, dtype=float)
    y = np.asarray(values, dtype=float)
    d = np.diff(y)
    scale = max(np.max(np.abs(y)), 1e-300)
    sign = np.sign(np.where(np.abs(d) > rel_tol * scale, d, 0.0))
    nz = np.nonzero(sign)[0]
    extrema = []
    for i, j in zip(nz[:-1], nz[1:]):
        if sign[i] != sign[j]:
            # extremum sits on the sample(s) between the two opposite slopes
            extrema.append(0.5 * (wl[i + 1] + wl[j]))
    if len(extrema) < 3:
        return None
    return float(np.mean(np.diff(extrema)))


def dgd_report(scan: ScanSet, pair=None) -> DGDReport:
    if len(scan) < 10:
        raise ValueError("DGD report needs at least 10 wavelength points")
    pair = tuple(pair or scan.pairs()[0])
    recs = dgd_series(scan, pair)
    dgd = np.array([r.dgd for r in recs])
    wl = np.array([r.wavelength for r in recs])
    return DGDReport(recs, pair, float(dgd.mean()), float(dgd.std()), oscillation_half_period(wl, dgd))


def pair_agreement(scan: ScanSet) -> dict:
    """Max relative DGD difference of every valid pair against the first one."""
    pairs = scan.pairs()
    ref = np.array([r.dgd for r in dgd_series(scan, pairs[0])])
    scale = max(float(np.max(ref)), 1e-300)
    out = {}
    for p in pairs[1:]:
        d = np.array([r.dgd for r in dgd_series(scan, p)])
        out[f"{p[0]}{p[1]}"] = float(np.max(np.abs(d - ref)) / scale)
    return {"reference_pair": f"{pairs[0][0]}{pairs[0][1]}", "max_rel_diff": out}


def dgd_records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["wavelength_nm", "dgd_ps", "psp_s1", "psp_s2", "psp_s3"])
    for r in records:
        w.writerow([f"{r.wavelength:.6f}", f"{r.dgd:.12g}"] + [f"{x:.12g}" for x in r.psp.array])
    return buf.getvalue()


def read_scan(path: str | Path, inputs_path=None) -> ScanSet:
    declared = load_declared_inputs(inputs_path) if inputs_path else None
    return parse_scan(Path(path), declared)
