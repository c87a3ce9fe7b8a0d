"""Flat ``key = value`` run configuration with per-subcommand schemas.

A config file is a list of ``key = value`` lines (``#`` comments allowed, no
sections).  Every key has a command-line flag of the same name; precedence
is schema default < config file < flag.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

_SECTION = "run"


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


def _float_list(text: str) -> list[float]:
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    return [float(t) for t in items]


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Param:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str


def _p(name, parse, default, help_):
    return Param(name, parse, default, help_)


COMMON = [
    _p("seed", int, 42, "master random seed"),
    _p("out", str, "out", "output directory"),
    _p("svg", _bool, False, "also write SVG line charts"),
]

FIBER = [
    _p("fiber", str, "", "fiber JSON to load instead of synthesizing one"),
    _p("length_km", float, 30.0, "fiber length (km)"),
    _p("pmd_coeff", float, 0.05, "PMD coefficient (ps/sqrt(km))"),
    _p("n_segments", int, 200, "birefringent segments per fiber"),
]

GRID = [
    _p("start_nm", float, 1260.0, "first grid wavelength (nm)"),
    _p("stop_nm", float, 1360.0, "last grid wavelength (nm)"),
    _p("step_nm", float, 0.25, "grid step (nm)"),
]

SCHEMAS: dict[str, list[Param]] = {
    "simulate": COMMON
    + FIBER
    + GRID
    + [
        _p("states", _str_list, ["H", "V", "D", "A"], "launched states, comma separated"),
        _p("scan_states", _str_list, ["H", "D", "R"], "states used for the synthetic polarimeter scan"),
    ],
    "infidelity": COMMON
    + FIBER
    + GRID
    + [
        _p("window_nm", float, 5.0, "rolling filter width (nm)"),
        _p("states", _str_list, ["H", "V", "D", "A"], "launched states, comma separated"),
    ],
    "sweep": COMMON
    + [
        _p("pmd_coeff", float, 0.05, "PMD coefficient (ps/sqrt(km))"),
        _p("lengths_km", _float_list, [10.0, 50.0, 100.0, 150.0, 200.0], "fiber lengths (km)"),
        _p("widths_nm", _float_list, [2.0], "filter bandwidths (nm)"),
        _p("n_realizations", int, 200, "fibers per ensemble"),
        _p("n_segments", int, 200, "birefringent segments per fiber"),
        _p("center_nm", float, 1310.0, "band center (nm)"),
        _p("n_samples", int, 21, "spectral samples per band (odd)"),
    ],
    "mmm": COMMON
    + [
        _p("scan", str, "", "polarimeter scan CSV"),
        _p("inputs", str, "", "declared launched-state JSON (optional)"),
        _p("pair", _str_list, [], "launched-state pair to use, e.g. H,D (optional)"),
    ],
    "qber-model": COMMON
    + [
        _p("pmd_coeff", float, 0.0474, "PMD coefficient (ps/sqrt(km))"),
        _p("bandwidth_nm", float, 2.0, "filter bandwidth (nm)"),
        _p("center_nm", float, 1310.0, "band center (nm)"),
        _p("distances_km", _float_list, [10.0 * k for k in range(1, 11)], "model distances (km)"),
        _p("baseline", float, 0.0, "QBER offset added to the model line"),
        _p("measured", str, "", "measured QBER CSV: distance_km,qber[,uncertainty]"),
    ],
    "basis-study": COMMON
    + [
        _p("protocol", str, "bb84", "bb84 or six_state"),
        _p("p_z", float, 0.5, "probability of basis Z (bb84)"),
        _p("omega_axis", _float_list, [0.0, 0.0, 1.0], "PMD axis (Stokes, unit)"),
        _p("delta_theta", float, 1.0, "arc angle (rad) when no fiber is given"),
        _p("objective", str, "min_weighted", "min_weighted or balance_ratio"),
        _p("ratio", float, 1.0, "target Z/X error ratio for balance_ratio"),
        _p("n_orientations", int, 100, "random triads for the six-state table"),
        _p("fiber", str, "", "fiber JSON; sets axis and arc angle from the band"),
        _p("center_nm", float, 1310.0, "band center (nm)"),
        _p("width_nm", float, 20.0, "band width (nm)"),
        _p("step_nm", float, 0.05, "grid step for fiber analysis (nm)"),
    ],
}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Raw ``key -> text`` mapping from a flat config file."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return dict(parser[_SECTION])


def resolve(command: str, file_values: dict[str, str], flag_values: dict[str, Any]) -> dict[str, Any]:
    """Merge defaults, config-file text and flag text into typed values."""
    schema = {p.name: p for p in SCHEMAS[command]}
    unknown = sorted(set(file_values) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    out = {}
    for name, param in schema.items():
        raw = flag_values.get(name)
        if raw is None:
            raw = file_values.get(name)
        if raw is None:
            out[name] = param.default
            continue
        try:
            out[name] = param.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    return out
