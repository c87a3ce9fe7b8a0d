"""Random-birefringence fiber emulator.

A fiber is a cascade of birefringent waveplates with equal differential
delays and axes drawn uniformly on the Poincare sphere.  Segment k acts on
Jones vectors as exp(-i omega tau_k/2 a_k.sigma), i.e. it rotates Stokes
vectors by omega*tau_k about a_k.

PMD vectors are oriented physically: ds/domega = Omega x s.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .polarization import (
    JonesUnitary,
    JonesVector,
    StokesVector,
    adjoint_rotation,
    rotation_angle_axis,
    stokes_of,
    su2,
)

C_NM_PER_S = 2.99792458e17
PS = 1e-12
MAXWELL_RMS_TO_MEAN = np.sqrt(3 * np.pi / 8)
ALIAS_MARGIN = 1e-3
UNDERSAMPLING_ANGLE = np.pi / 4
DEFAULT_SEGMENTS = 200


class AliasingError(ValueError):
    """Spectral step too coarse: the per-step rotation is too close to pi."""


class UnderSamplingWarning(UserWarning):
    pass


def omega_of(wavelength_nm):
    """Angular optical frequency (rad/s) for vacuum wavelength(s) in nm."""
    return 2 * np.pi * C_NM_PER_S / np.asarray(wavelength_nm, dtype=float)


def realization_seed(master_seed: int, index: int) -> int:
    """Independent 64-bit seed for realization ``index`` of an ensemble."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class FiberSpec:
    length_km: float
    pmd_coeff: float  # ps/sqrt(km)
    n_segments: int = DEFAULT_SEGMENTS
    seed: int = 0

    def __post_init__(self):
        if not self.length_km > 0:
            raise ValueError(f"length_km must be > 0, got {self.length_km}")
        if not self.pmd_coeff >= 0:
            raise ValueError(f"pmd_coeff must be >= 0, got {self.pmd_coeff}")
        if int(self.n_segments) != self.n_segments or self.n_segments < 1:
            raise ValueError(f"n_segments must be a positive integer, got {self.n_segments}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")

    @property
    def mean_dgd_ps(self) -> float:
        return self.pmd_coeff * np.sqrt(self.length_km)

    @property
    def segment_delay_ps(self) -> float:
        # equal delays, chosen so that the Maxwellian mean equals pmd_coeff*sqrt(L)
        return MAXWELL_RMS_TO_MEAN * self.mean_dgd_ps / np.sqrt(self.n_segments)


@dataclass(frozen=True, eq=False)
class FiberRealization:
    """Ordered waveplate cascade; ``axes`` is (N, 3), ``delays_ps`` is (N,)."""

    axes: np.ndarray
    delays_ps: np.ndarray

    def __post_init__(self):
        axes = np.array(self.axes, dtype=float).reshape(-1, 3)
        delays = np.array(self.delays_ps, dtype=float).reshape(-1)
        if len(axes) == 0 or len(axes) != len(delays):
            raise ValueError("need one delay per segment and at least one segment")
        if np.any(np.abs(np.linalg.norm(axes, axis=1) - 1) > 1e-12):
            raise ValueError("segment axes must be unit vectors")
        if np.any(delays < 0) or not np.all(np.isfinite(delays)):
            raise ValueError("segment delays must be finite and non-negative")
        axes.setflags(write=False)
        delays.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "delays_ps", delays)

    def __len__(self):
        return len(self.delays_ps)

    def __eq__(self, other):
        if not isinstance(other, FiberRealization):
            return NotImplemented
        return np.array_equal(self.axes, other.axes) and np.array_equal(
            self.delays_ps, other.delays_ps
        )

    @property
    def segments(self) -> list[dict]:
        return [
            {"axis": [float(x) for x in a], "delay_ps": float(d)}
            for a, d in zip(self.axes, self.delays_ps)
        ]

    def split(self, k: int) -> tuple[FiberRealization, FiberRealization]:
        """The first ``k`` segments and the remainder, in propagation order."""
        return (
            FiberRealization(self.axes[:k], self.delays_ps[:k]),
            FiberRealization(self.axes[k:], self.delays_ps[k:]),
        )

    def scaled(self, factor: float) -> FiberRealization:
        return FiberRealization(self.axes, self.delays_ps * factor)

    def to_json(self) -> str:
        return json.dumps({"segments": self.segments}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> FiberRealization:
        doc = json.loads(text)
        try:
            segs = doc["segments"]
            axes = [s["axis"] for s in segs]
            delays = [s["delay_ps"] for s in segs]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed fiber document: {exc}") from exc
        axes = np.asarray(axes, dtype=float)
        # tolerate rounding in hand-written files; exact files stay bit-identical
        norms = np.linalg.norm(axes, axis=-1, keepdims=True)
        if np.any(np.abs(norms - 1) > 1e-12):
            axes = axes / norms
        return cls(axes, delays)

    @classmethod
    def waveplate(cls, axis, delay_ps: float) -> FiberRealization:
        """Single-segment fiber: pure first-order PMD."""
        a = np.asarray(axis, dtype=float)
        return cls(a / np.linalg.norm(a), [delay_ps])


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    wavelengths: np.ndarray

    def __post_init__(self):
        wl = np.array(self.wavelengths, dtype=float).reshape(-1)
        if len(wl) < 2:
            raise ValueError("a spectral grid needs at least 2 points")
        d = np.diff(wl)
        if np.any(d <= 0):
            raise ValueError("grid wavelengths must be strictly increasing")
        if np.ptp(d) > 1e-9:
            raise ValueError("grid must be uniform within 1e-9 nm")
        wl.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)

    @classmethod
    def from_range(cls, start_nm: float, stop_nm: float, step_nm: float) -> SpectralGrid:
        """Inclusive uniform grid; ``stop_nm`` must lie on the lattice within 1e-6 step."""
        n = (stop_nm - start_nm) / step_nm
        if n < 1 or abs(n - round(n)) > 1e-6:
            raise ValueError(
                f"range {start_nm}..{stop_nm} is not a whole number of {step_nm} nm steps"
            )
        return cls(start_nm + step_nm * np.arange(int(round(n)) + 1))

    @classmethod
    def centered(cls, center_nm: float, width_nm: float, n_points: int) -> SpectralGrid:
        return cls(center_nm + width_nm * np.linspace(-0.5, 0.5, n_points))

    @property
    def step(self) -> float:
        return float(self.wavelengths[1] - self.wavelengths[0])

    def __len__(self):
        return len(self.wavelengths)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Output Stokes vectors sampled on a wavelength grid."""

    wavelengths: np.ndarray
    stokes: np.ndarray

    def __post_init__(self):
        wl = np.array(self.wavelengths, dtype=float).reshape(-1)
        s = np.array(self.stokes, dtype=float).reshape(-1, 3)
        if len(wl) != len(s):
            raise ValueError("one Stokes vector per wavelength required")
        wl.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "stokes", s)

    @classmethod
    def from_pairs(cls, pairs) -> Trajectory:
        pairs = list(pairs)
        wl = [p[0] for p in pairs]
        s = [p[1].array if isinstance(p[1], StokesVector) else p[1] for p in pairs]
        return cls(np.asarray(wl, float), np.asarray(s, float).reshape(-1, 3))

    def __len__(self):
        return len(self.wavelengths)

    def __iter__(self) -> Iterator[tuple[float, StokesVector]]:
        for wl, s in zip(self.wavelengths, self.stokes):
            yield float(wl), StokesVector.from_array(s)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Trajectory(self.wavelengths[idx], self.stokes[idx])
        return float(self.wavelengths[idx]), StokesVector.from_array(self.stokes[idx])


@dataclass(frozen=True, eq=False)
class PMDVectorSample:
    wavelength: float  # nm
    omega_vec: np.ndarray  # ps, Stokes space

    @property
    def dgd(self) -> float:
        return float(np.linalg.norm(self.omega_vec))

    @property
    def psp(self) -> StokesVector | None:
        """Unit PMD direction, or None where the DGD vanishes."""
        n = self.dgd
        return StokesVector.from_array(self.omega_vec / n) if n > 0 else None


def synthesize_fiber(spec: FiberSpec) -> FiberRealization:
    """Draw a fiber realization; bit-identical for a given ``spec``."""
    rng = np.random.default_rng(int(spec.seed))
    axes = rng.standard_normal((spec.n_segments, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return FiberRealization(axes, np.full(spec.n_segments, spec.segment_delay_ps))


def cascade_unitaries(axes: np.ndarray, delays_ps: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """Ordered waveplate products, batched.

    Parameters
    ----------
    axes : (..., N, 3) segment axes
    delays_ps : (..., N) segment delays
    omegas : (M,) angular frequencies in rad/s

    Returns
    -------
    (..., M, 2, 2) complex array, U = U_N ... U_1 at each frequency.
    """
    axes = np.asarray(axes, dtype=float)
    delays = np.asarray(delays_ps, dtype=float) * PS
    omegas = np.asarray(omegas, dtype=float)
    batch = axes.shape[:-2]
    u = np.broadcast_to(np.eye(2, dtype=complex), batch + omegas.shape + (2, 2)).copy()
    for k in range(axes.shape[-2]):
        ax = axes[..., k, :][..., None, :]
        angle = delays[..., k][..., None] * omegas
        u = su2(ax, angle) @ u
    return u


def transfer_unitary(fiber: FiberRealization, wavelength: float) -> JonesUnitary:
    if not wavelength > 0:
        raise ValueError("wavelength must be positive")
    u = cascade_unitaries(fiber.axes, fiber.delays_ps, omega_of([wavelength]))[0]
    return JonesUnitary(u)


def stokes_rotations(fiber: FiberRealization, wavelengths) -> np.ndarray:
    """(M, 3, 3) Stokes rotation of the whole fiber at each wavelength."""
    u = cascade_unitaries(fiber.axes, fiber.delays_ps, omega_of(wavelengths))
    return adjoint_rotation(u)


def _adjacent_angles(stokes: np.ndarray) -> np.ndarray:
    dots = np.clip(np.einsum("...i,...i->...", stokes[..., 1:, :], stokes[..., :-1, :]), -1, 1)
    return np.arccos(dots)


def propagate_trajectory(
    fiber: FiberRealization, input_state: JonesVector, grid: SpectralGrid
) -> Trajectory:
    """Output polarization across ``grid`` for a fixed launched state.

    Emits :class:`UnderSamplingWarning` when neighbouring samples are
    pi/4 or more apart on the sphere.
    """
    u = cascade_unitaries(fiber.axes, fiber.delays_ps, omega_of(grid.wavelengths))
    out = u @ input_state.array
    s = stokes_of(out)
    s /= np.linalg.norm(s, axis=-1, keepdims=True)
    steps = _adjacent_angles(s)
    if np.any(steps >= UNDERSAMPLING_ANGLE):
        i = int(np.argmax(steps))
        warnings.warn(
            f"trajectory under-sampled: {steps[i]:.3f} rad between "
            f"{grid.wavelengths[i]:.4f} and {grid.wavelengths[i + 1]:.4f} nm",
            UnderSamplingWarning,
            stacklevel=2,
        )
    return Trajectory(grid.wavelengths, s)


def pmd_vectors_from_rotations(rotations: np.ndarray, wavelengths: np.ndarray):
    """Finite-difference PMD vectors from Stokes rotations at consecutive wavelengths.

    For each consecutive pair the incremental rotation R_b R_a^T is converted
    to angle and axis; |Omega| = angle / |omega_b - omega_a| and the axis is
    signed so that ds/domega = Omega x s.  Results sit at interval midpoints.

    Returns
    -------
    midpoints : (M-1,) nm
    omega_vecs : (M-1, 3) ps
    """
    rotations = np.asarray(rotations, dtype=float)
    wavelengths = np.asarray(wavelengths, dtype=float)
    delta = rotations[1:] @ np.swapaxes(rotations[:-1], -1, -2)
    angle, axis = rotation_angle_axis(delta)
    bad = np.nonzero(angle > np.pi - ALIAS_MARGIN)[0]
    if len(bad):
        i = int(bad[0])
        raise AliasingError(
            f"rotation of {angle[i]:.6f} rad between {wavelengths[i]:.4f} and "
            f"{wavelengths[i + 1]:.4f} nm is within {ALIAS_MARGIN} of pi; refine the grid"
        )
    d_omega = np.diff(omega_of(wavelengths))
    omega_vecs = axis * (angle / d_omega)[:, None] / PS
    return 0.5 * (wavelengths[1:] + wavelengths[:-1]), omega_vecs


def pmd_vector_spectrum(fiber: FiberRealization, grid: SpectralGrid) -> list[PMDVectorSample]:
    mid, vecs = pmd_vectors_from_rotations(stokes_rotations(fiber, grid.wavelengths), grid.wavelengths)
    return [PMDVectorSample(float(w), v) for w, v in zip(mid, vecs)]


def dgd_spectrum(fiber: FiberRealization, grid: SpectralGrid) -> list[tuple[float, float]]:
    return [(s.wavelength, s.dgd) for s in pmd_vector_spectrum(fiber, grid)]


def ensemble_arrays(spec: FiberSpec, n_realizations: int, master_seed: int):
    """Stacked axes (R, N, 3) and delays (R, N) of an ensemble.

    Realization i is exactly ``synthesize_fiber(spec with seed=realization_seed(master_seed, i))``.
    """
    fibers = [
        synthesize_fiber(
            FiberSpec(spec.length_km, spec.pmd_coeff, spec.n_segments, realization_seed(master_seed, i))
        )
        for i in range(n_realizations)
    ]
    return np.stack([f.axes for f in fibers]), np.stack([f.delays_ps for f in fibers])


def ensemble_dgd(spec: FiberSpec, n_realizations: int, master_seed: int, wavelength_nm: float = 1310.0,
                 step_nm: float = 0.01) -> np.ndarray:
    """DGD (ps) of each ensemble member at ``wavelength_nm`` by the finite-difference scheme."""
    axes, delays = ensemble_arrays(spec, n_realizations, master_seed)
    wl = np.array([wavelength_nm - step_nm / 2, wavelength_nm + step_nm / 2])
    rot = adjoint_rotation(cascade_unitaries(axes, delays, omega_of(wl)))
    delta = rot[:, 1] @ np.swapaxes(rot[:, 0], -1, -2)
    angle, _ = rotation_angle_axis(delta)
    return angle / abs(np.diff(omega_of(wl))[0]) / PS


def as_trajectory(traj) -> Trajectory:
    if isinstance(traj, Trajectory):
        return traj
    return Trajectory.from_pairs(traj)


def grid_of(wavelengths: Sequence[float]) -> SpectralGrid:
    return SpectralGrid(np.asarray(wavelengths, dtype=float))
