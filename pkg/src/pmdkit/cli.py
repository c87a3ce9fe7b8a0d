"""Command-line front end.

Every subcommand reads an optional flat config file (``--config``) whose
keys may all be overridden by flags of the same name, and writes CSV/JSON
(and optionally SVG) files into ``--out``.  Exit codes: 0 success,
1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMAS, ConfigError, read_config_file, resolve
from .fiber import (
    FiberRealization,
    FiberSpec,
    SpectralGrid,
    dgd_spectrum,
    pmd_vector_spectrum,
    propagate_trajectory,
    synthesize_fiber,
)
from .infidelity import (
    BandSpec,
    arc_angle,
    dgd_based_infidelity,
    ensemble_mean_infidelity,
    rolling_infidelity,
    window_half_width,
)
from .mmm import dgd_records_to_csv, dgd_report, pair_agreement, read_scan, scan_to_csv, synthesize_scan
from .output import svg_line_chart, write_atomic, write_csv, write_json
from .polarization import NAMED_STATES
from .protocol import (
    ProtocolSpec,
    canonical_geometries,
    higher_order_report,
    optimize_orientation,
    protocol_error_budget,
    random_triad,
    six_state_average,
)
from .qber import linear_regression, model_line, parse_qber_csv

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


def _states(labels) -> dict:
    unknown = [s for s in labels if s not in NAMED_STATES]
    if unknown or not labels:
        raise ConfigError(f"states must be drawn from {','.join(NAMED_STATES)}; got {','.join(labels) or 'none'}")
    return {s: NAMED_STATES[s] for s in labels}


def _fiber(cfg) -> FiberRealization:
    if cfg["fiber"]:
        return FiberRealization.from_json(Path(cfg["fiber"]).read_text(encoding="utf-8"))
    return synthesize_fiber(FiberSpec(cfg["length_km"], cfg["pmd_coeff"], cfg["n_segments"], cfg["seed"]))


def _grid(cfg) -> SpectralGrid:
    return SpectralGrid.from_range(cfg["start_nm"], cfg["stop_nm"], cfg["step_nm"])


def _svg(cfg, out: Path, name: str, *args, **kwargs) -> list[Path]:
    if not cfg["svg"]:
        return []
    return [write_atomic(out / name, svg_line_chart(*args, **kwargs))]


def cmd_simulate(cfg, out: Path) -> list[Path]:
    fiber = _fiber(cfg)
    grid = _grid(cfg)
    states = _states(cfg["states"])
    written = [write_atomic(out / "fiber.json", fiber.to_json() + "\n")]
    for label, state in states.items():
        traj = propagate_trajectory(fiber, state, grid)
        written.append(
            write_csv(out / f"trajectory_{label}.csv", ["wavelength_nm", "s1", "s2", "s3"],
                      ([w, *s] for w, s in zip(traj.wavelengths, traj.stokes)))
        )
    dgd = dgd_spectrum(fiber, grid)
    written.append(write_csv(out / "dgd.csv", ["wavelength_nm", "dgd_ps"], dgd))
    scan = synthesize_scan(fiber, grid, labels=tuple(_states(cfg["scan_states"])))
    written.append(write_atomic(out / "scan.csv", scan_to_csv(scan)))
    written.append(write_json(out / "scan_inputs.json", {k: v.tolist() for k, v in scan.inputs.items()}))
    written += _svg(cfg, out, "dgd.svg", [w for w, _ in dgd], {"DGD (ps)": [d for _, d in dgd]},
                    title="DGD spectrum", xlabel="wavelength (nm)", ylabel="DGD (ps)")
    return written


def cmd_infidelity(cfg, out: Path) -> list[Path]:
    fiber = _fiber(cfg)
    grid = _grid(cfg)
    states = _states(cfg["states"])
    h = window_half_width(grid.step, cfg["window_nm"])
    curves = {}
    for label, state in states.items():
        curves[label] = rolling_infidelity(propagate_trajectory(fiber, state, grid), cfg["window_nm"])
    centers = [c for c, _ in next(iter(curves.values()))]
    # the bound uses the width the rolling window actually spans
    bound = dgd_based_infidelity(dgd_spectrum(fiber, grid), 2 * h * grid.step, centers)
    header = ["wavelength_nm"] + [f"p_e_{s}" for s in states] + ["p_e_dgd_bound"]
    rows = [[c] + [curves[s][i][1] for s in states] + [bound[i][1]] for i, c in enumerate(centers)]
    written = [write_csv(out / "infidelity.csv", header, rows)]
    series = {f"p_e {s}": [p for _, p in curves[s]] for s in states}
    series["DGD bound"] = [p for _, p in bound]
    written += _svg(cfg, out, "infidelity.svg", centers, series, title=f"{cfg['window_nm']} nm filter",
                    xlabel="wavelength (nm)", ylabel="p_e")
    return written


def cmd_sweep(cfg, out: Path) -> list[Path]:
    rows = ensemble_mean_infidelity(
        cfg["pmd_coeff"], cfg["lengths_km"], cfg["widths_nm"], cfg["n_realizations"], cfg["seed"],
        center_nm=cfg["center_nm"], n_samples=cfg["n_samples"], n_segments=cfg["n_segments"],
    )
    header = ["distance_km", "bandwidth_nm", "p_e_mean", "p_e_std", "p_e_dgd_method"]
    written = [write_csv(out / "sweep.csv", header,
                         ([r.length_km, r.width_nm, r.mean, r.std, r.dgd_method] for r in rows))]
    if len(cfg["lengths_km"]) >= len(cfg["widths_nm"]):
        w0 = cfg["widths_nm"][0]
        sel = [r for r in rows if r.width_nm == w0]
        x, label = [r.length_km for r in sel], "distance (km)"
    else:
        l0 = cfg["lengths_km"][0]
        sel = [r for r in rows if r.length_km == l0]
        x, label = [r.width_nm for r in sel], "bandwidth (nm)"
    written += _svg(cfg, out, "sweep.svg", x, {"trajectory": [r.mean for r in sel], "DGD method": [r.dgd_method for r in sel]},
                    title="ensemble mean p_e", xlabel=label, ylabel="p_e")
    return written


def cmd_mmm(cfg, out: Path) -> list[Path]:
    if not cfg["scan"]:
        raise ConfigError("scan: a polarimeter scan CSV is required")
    scan = read_scan(cfg["scan"], cfg["inputs"] or None)
    pair = tuple(cfg["pair"]) if cfg["pair"] else None
    if pair is not None and len(pair) != 2:
        raise ConfigError("pair: give exactly two launched-state labels")
    report = dgd_report(scan, pair)
    summary = report.summary()
    if len(scan.pairs()) >= 2:
        summary["pair_agreement"] = pair_agreement(scan)
    written = [
        write_atomic(out / "mmm_dgd.csv", dgd_records_to_csv(report.records)),
        write_json(out / "mmm_summary.json", summary),
    ]
    written += _svg(cfg, out, "mmm_dgd.svg", [r.wavelength for r in report.records], {"DGD (ps)": [r.dgd for r in report.records]},
                    title="MMM DGD", xlabel="wavelength (nm)", ylabel="DGD (ps)")
    return written


def cmd_qber_model(cfg, out: Path) -> list[Path]:
    band = BandSpec(cfg["center_nm"], cfg["bandwidth_nm"])
    dist = cfg["distances_km"]
    if not dist:
        raise ConfigError("distances_km: at least one distance is required")
    line = model_line(cfg["pmd_coeff"], band, dist, cfg["baseline"])
    written = [write_csv(out / "qber_model.csv", ["distance_km", "qber_model"], zip(dist, line))]
    series = {"model": list(line)}
    if cfg["measured"]:
        measured = parse_qber_csv(Path(cfg["measured"]))
        reg = linear_regression(measured.distances_km, measured.qber)
        written.append(write_json(out / "qber_regression.json",
                                  {"slope_per_km": reg.slope, "intercept": reg.intercept, "r": reg.r, "n_points": reg.n}))
    written += _svg(cfg, out, "qber_model.svg", dist, series, title="PMD QBER model", xlabel="distance (km)", ylabel="QBER")
    return written


def cmd_basis_study(cfg, out: Path) -> list[Path]:
    protocol = (
        ProtocolSpec.six_state() if cfg["protocol"] == "six_state"
        else ProtocolSpec.bb84(cfg["p_z"]) if cfg["protocol"] == "bb84"
        else None
    )
    if protocol is None:
        raise ConfigError(f"protocol: expected bb84 or six_state, got {cfg['protocol']!r}")
    result: dict = {"protocol": protocol.kind, "basis_probs": list(protocol.basis_probs)}
    if cfg["fiber"]:
        fiber = FiberRealization.from_json(Path(cfg["fiber"]).read_text(encoding="utf-8"))
        band = BandSpec(cfg["center_nm"], cfg["width_nm"])
        half = cfg["width_nm"] / 2
        grid = SpectralGrid.from_range(cfg["center_nm"] - half, cfg["center_nm"] + half, cfg["step_nm"])
        report = higher_order_report(fiber, band, grid)
        center = pmd_vector_spectrum(fiber, SpectralGrid(np.array([cfg["center_nm"] - 0.005, cfg["center_nm"] + 0.005])))[0]
        if center.psp is None:
            raise ConfigError("fiber has no defined PSP at the band center")
        axis = center.psp.array
        delta_theta = arc_angle(report.mean_dgd, band)
        result["higher_order"] = report.to_dict()
    else:
        axis = np.asarray(cfg["omega_axis"], dtype=float)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1) > 1e-9:
            raise ConfigError("omega_axis: need a unit 3-vector")
        delta_theta = cfg["delta_theta"]
    result["omega_axis"] = [float(a) for a in axis]
    result["delta_theta"] = float(delta_theta)

    if protocol.kind == "bb84":
        geoms = canonical_geometries(axis)
        result["geometries"] = {k: protocol_error_budget(protocol, c, axis, delta_theta).to_dict()
                                for k, c in geoms.items()}
        opt = optimize_orientation(protocol, axis, delta_theta, cfg["objective"],
                                   cfg["ratio"] if cfg["objective"] == "balance_ratio" else None)
        result["optimizer"] = {
            "objective": cfg["objective"],
            "alpha": opt.alpha,
            "normal": opt.circle.normal.tolist(),
            "reference": opt.circle.reference.tolist(),
            "budget": opt.budget.to_dict(),
        }
    else:
        rng = np.random.default_rng(cfg["seed"])
        values = [six_state_average(random_triad(rng), delta_theta, axis) for _ in range(cfg["n_orientations"])]
        result["six_state"] = {
            "axis_aligned": six_state_average(np.eye(3), delta_theta, axis),
            "mean": float(np.mean(values)),
            "std": float(np.std(values)),
            "n_orientations": len(values),
        }
    return [write_json(out / "basis_study.json", result)]


COMMANDS = {
    "simulate": cmd_simulate,
    "infidelity": cmd_infidelity,
    "sweep": cmd_sweep,
    "mmm": cmd_mmm,
    "qber-model": cmd_qber_model,
    "basis-study": cmd_basis_study,
}


SUMMARIES = {
    "simulate": "synthesize a fiber; write trajectories, DGD spectrum and a polarimeter scan",
    "infidelity": "rolling-window infidelity per launched state with the DGD-method bound",
    "sweep": "ensemble-mean infidelity over distance and bandwidth",
    "mmm": "DGD and PSP spectra from a polarimeter scan (Mueller matrix method)",
    "qber-model": "QBER-vs-distance model line, optionally regressed against measured data",
    "basis-study": "error budgets and orientation of QKD measurement bases against the PMD vector",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmdkit", description="PMD impact on polarization-encoded QKD")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=SUMMARIES[name], description=SUMMARIES[name])
        p.add_argument("--config", metavar="PATH", help="flat key = value config file")
        for param in SCHEMAS[name]:
            flags = [f"--{param.name}"]
            if "_" in param.name:
                flags.append(f"--{param.name.replace('_', '-')}")
            p.add_argument(*flags, dest=param.name, default=None, metavar="VALUE",
                           help=f"{param.help} (default: {param.default})")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_values = read_config_file(args.config) if args.config else {}
        flag_values = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        cfg = resolve(args.command, file_values, flag_values)
        out = Path(cfg["out"])
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            written = COMMANDS[args.command](cfg, out)
    except OSError as exc:
        print(f"pmdkit {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"pmdkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for path in written:
        print(path)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))
