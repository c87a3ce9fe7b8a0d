"""PMD-induced measurement-error probability (infidelity).

Three routes to the same quantity:

* closed form for a first-order arc, p_e = sin^2(phi)/2 * (1 - sinc(dtheta/2));
* its small-angle limit, p_e = sin^2(phi) dtheta^2 / 48;
* numerical integration of |<s(lambda)|s0>|^2 along a sampled trajectory.

Spectra are rectangular (uniform weight per nm) unless a weight function is
supplied.  Integration uses composite Simpson weights, which are exact enough
on 0.05 rad sampling to agree with the closed form to 1e-6.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fiber import (
    PS,
    FiberSpec,
    Trajectory,
    as_trajectory,
    cascade_unitaries,
    ensemble_arrays,
    omega_of,
    C_NM_PER_S,
)
from .polarization import (
    PAULI,
    DensityMatrix,
    JonesVector,
    StokesVector,
    adjoint_rotation,
    jones_to_stokes,
    rotation_angle_axis,
    stokes_of,
    stokes_to_jones,
)

SpectralWeight = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BandSpec:
    center_nm: float
    width_nm: float

    def __post_init__(self):
        if not self.center_nm > 0:
            raise ValueError("band center must be positive")
        if not 0 <= self.width_nm < self.center_nm:
            raise ValueError(f"band width {self.width_nm} nm out of range")


@dataclass(frozen=True)
class ArcParams:
    delta_theta: float
    phi: float

    def __post_init__(self):
        if not self.delta_theta >= 0:
            raise ValueError("delta_theta must be >= 0")
        if not 0 <= self.phi <= np.pi / 2 + 1e-12:
            raise ValueError(f"phi = {self.phi} outside [0, pi/2]")


def delta_omega(band: BandSpec) -> float:
    """Angular-frequency width (rad/s) of a band, linearized about its center."""
    return 2 * np.pi * C_NM_PER_S * band.width_nm / band.center_nm**2


def arc_angle(dgd_ps: float, band: BandSpec) -> float:
    """Rotation angle swept across ``band`` by first-order PMD of ``dgd_ps``."""
    if dgd_ps < 0:
        raise ValueError("DGD must be non-negative")
    return dgd_ps * PS * delta_omega(band)


def sinc(x):
    """Unnormalized sinc, sin(x)/x with sinc(0) = 1."""
    return np.sinc(np.asarray(x, dtype=float) / np.pi)


def closed_form_infidelity(arc: ArcParams) -> float:
    return float(np.sin(arc.phi) ** 2 / 2 * (1 - sinc(arc.delta_theta / 2)))


def small_angle_infidelity(arc: ArcParams) -> float:
    return float(np.sin(arc.phi) ** 2 * arc.delta_theta**2 / 48)


def quadrature_weights(n: int) -> np.ndarray:
    """Normalized composite Simpson weights for ``n`` equally spaced samples.

    n = 1 and n = 2 degrade to a point mass and the two-point rule.  For even
    n >= 4 the last three intervals use Simpson's 3/8 rule.
    """
    if n < 1:
        raise ValueError("empty trajectory")
    if n == 1:
        return np.ones(1)
    if n == 2:
        return np.array([0.5, 0.5])
    w = np.zeros(n)
    m = n if n % 2 == 1 else n - 3  # points covered by the 1/3 rule
    if m >= 3:
        w[:m:2] += 2.0 / 3
        w[1:m:2] += 4.0 / 3
        w[0] -= 1.0 / 3
        w[m - 1] -= 1.0 / 3
    if n % 2 == 0:
        w[n - 4 : n] += np.array([3, 9, 9, 3]) / 8.0
    return w / w.sum()


def _check_uniform(wl: np.ndarray):
    if len(wl) > 2:
        d = np.diff(wl)
        if np.ptp(d) > 1e-9 * max(1.0, abs(wl[-1] - wl[0])):
            raise ValueError("trajectory samples must be uniformly spaced in wavelength")


def _weights(traj: Trajectory, spectral_weight: SpectralWeight | None) -> np.ndarray:
    _check_uniform(traj.wavelengths)
    w = quadrature_weights(len(traj))
    if spectral_weight is not None:
        w = w * np.asarray(spectral_weight(traj.wavelengths), dtype=float)
        if not w.sum() > 0:
            raise ValueError("spectral weight vanishes on the trajectory")
        w = w / w.sum()
    return w


def mixed_state(traj, spectral_weight: SpectralWeight | None = None) -> DensityMatrix:
    """Band-averaged density matrix of a sampled trajectory."""
    traj = as_trajectory(traj)
    w = _weights(traj, spectral_weight)
    bloch = w @ traj.stokes
    return DensityMatrix(0.5 * (np.eye(2) + np.einsum("k,kij->ij", bloch, PAULI)))


def _central_stokes(stokes: np.ndarray) -> np.ndarray:
    n = len(stokes)
    if n % 2:
        return stokes[n // 2]
    # no sample at the band center; the normalized chord midpoint is off the
    # arc by O(step^2) when the arc is not a great circle
    mid = stokes[n // 2 - 1] + stokes[n // 2]
    norm = np.linalg.norm(mid)
    if norm < 1e-12:
        raise ValueError("central samples are antipodal; pass s0 explicitly")
    return mid / norm


def trajectory_infidelity(
    traj,
    s0: JonesVector | StokesVector | None = None,
    spectral_weight: SpectralWeight | None = None,
) -> float:
    """1 - band average of |<s(lambda)|s0>|^2.

    ``s0`` defaults to the sample at the central wavelength.  With an even
    sample count there is none and the normalized midpoint of the two central
    samples is used instead; use odd counts where the reference matters.
    """
    traj = as_trajectory(traj)
    if len(traj) < 2:
        raise ValueError("trajectory integration needs at least 2 samples")
    w = _weights(traj, spectral_weight)
    if s0 is None:
        ref = _central_stokes(traj.stokes)
    elif isinstance(s0, JonesVector):
        ref = jones_to_stokes(s0).array
    else:
        ref = s0.unit().array
    overlaps = 0.5 * (1 + traj.stokes @ ref)
    return float(1 - w @ overlaps)


def window_half_width(step_nm: float, width_nm: float) -> int:
    """Samples on each side of the center for a rolling window of ``width_nm``."""
    if width_nm < 3 * step_nm - 1e-9:
        raise ValueError(f"window {width_nm} nm is narrower than 3 grid steps ({step_nm} nm)")
    return max(2, int(round(width_nm / (2 * step_nm))))


def rolling_infidelity(traj, width_nm: float) -> list[tuple[float, float]]:
    """Trajectory infidelity of a window rolled along the trajectory.

    The window spans ``2*h`` grid steps with ``h = round(width/(2 step))`` and
    is centered on a grid sample, which also serves as s0.  Windows that would
    run past either end of the trajectory are skipped.
    """
    traj = as_trajectory(traj)
    _check_uniform(traj.wavelengths)
    step = traj.wavelengths[1] - traj.wavelengths[0]
    h = window_half_width(step, width_nm)
    n = len(traj)
    if 2 * h + 1 > n:
        raise ValueError(f"window of {width_nm} nm is wider than the {traj.wavelengths[-1] - traj.wavelengths[0]:.4g} nm grid")
    w = quadrature_weights(2 * h + 1)
    s = traj.stokes
    out = []
    for i in range(h, n - h):
        overlaps = 0.5 * (1 + s[i - h : i + h + 1] @ s[i])
        out.append((float(traj.wavelengths[i]), float(1 - w @ overlaps)))
    return out


def dgd_based_infidelity(
    dgd_series, width_nm: float, centers: Sequence[float] | None = None
) -> list[tuple[float, float]]:
    """Upper-bound curve dtheta^2/48 from a DGD spectrum (sin phi = 1).

    dtheta = (mean DGD inside the window) * delta_omega(window).  Without
    ``centers`` every series point whose full window fits in the series is
    used.
    """
    wl = np.array([p[0] for p in dgd_series], dtype=float)
    dgd = np.array([p[1] for p in dgd_series], dtype=float)
    _check_uniform(wl)
    half = width_nm / 2
    tol = 1e-9
    if centers is None:
        centers = [c for c in wl if c - half >= wl[0] - tol and c + half <= wl[-1] + tol]
    out = []
    for c in centers:
        inside = np.abs(wl - c) <= half + tol
        if not inside.any():
            raise ValueError(f"no DGD samples within the window at {c} nm")
        dtheta = arc_angle(float(dgd[inside].mean()), BandSpec(float(c), width_nm))
        out.append((float(c), small_angle_infidelity(ArcParams(dtheta, np.pi / 2))))
    return out


def analytic_mean_infidelity(pmd_coeff: float, length_km: float, band: BandSpec) -> float:
    """Small-angle ensemble mean for uniform input states and Maxwellian DGD.

    E[sin^2 phi] = 2/3 and E[dgd^2] = (3 pi / 8) (pmd_coeff^2 L), giving
    pi pmd_coeff^2 L domega^2 / 192.
    """
    return float(np.pi * (pmd_coeff * PS) ** 2 * length_km * delta_omega(band) ** 2 / 192)


@dataclass(frozen=True)
class EnsembleRow:
    length_km: float
    width_nm: float
    mean: float
    std: float
    dgd_method: float


def random_input_states(n: int, master_seed: int) -> np.ndarray:
    """(n, 2) Jones arrays, uniform on the sphere, one RNG stream per index."""
    out = np.empty((n, 2), dtype=complex)
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), i, 1]))
        v = rng.standard_normal(3)
        out[i] = stokes_to_jones(StokesVector.from_array(v / np.linalg.norm(v))).array
    return out


def ensemble_mean_infidelity(
    pmd_coeff: float,
    lengths: Sequence[float],
    widths: Sequence[float],
    n_realizations: int,
    seed: int,
    center_nm: float = 1310.0,
    n_samples: int = 21,
    n_segments: int = 200,
) -> list[EnsembleRow]:
    """Monte Carlo mean/std of trajectory infidelity over fibers and input states.

    Realization i uses fiber seed ``realization_seed(seed, i)`` at every length
    and the same random input state, so rows share random numbers.  The
    ``dgd_method`` column averages (2/3) (dgd_i domega)^2 / 48 over the
    per-realization DGD at the band center: the small-angle formula with the
    uniform-input mean of sin^2 phi.
    """
    if n_realizations < 100:
        raise ValueError("n_realizations must be >= 100")
    if not lengths or not widths:
        raise ValueError("lengths and widths must be non-empty")
    if n_samples < 3 or n_samples % 2 == 0:
        raise ValueError("samples per band must be odd and >= 3")
    inputs = random_input_states(n_realizations, seed)
    offsets = np.linspace(-0.5, 0.5, n_samples)
    wl = np.concatenate([center_nm + w * offsets for w in widths])
    fd = np.array([center_nm - 0.005, center_nm + 0.005])
    omegas = omega_of(np.concatenate([wl, fd]))
    weights = quadrature_weights(n_samples)
    rows = []
    for length in lengths:
        spec = FiberSpec(length, pmd_coeff, n_segments, 0)
        axes, delays = ensemble_arrays(spec, n_realizations, seed)
        u = cascade_unitaries(axes, delays, omegas)
        s = stokes_of(np.einsum("rmab,rb->rma", u[:, : len(wl)], inputs))
        s = s.reshape(n_realizations, len(widths), n_samples, 3)
        ref = s[:, :, n_samples // 2 : n_samples // 2 + 1, :]
        p = 1 - np.einsum("n,rwn->rw", weights, 0.5 * (1 + np.sum(s * ref, axis=-1)))
        rot = adjoint_rotation(u[:, len(wl) :])
        angle, _ = rotation_angle_axis(rot[:, 1] @ np.swapaxes(rot[:, 0], -1, -2))
        dgd = angle / abs(omegas[-1] - omegas[-2])
        for j, width in enumerate(widths):
            dw = delta_omega(BandSpec(center_nm, width))
            rows.append(
                EnsembleRow(
                    float(length),
                    float(width),
                    float(p[:, j].mean()),
                    float(p[:, j].std(ddof=1)),
                    float(np.mean((2.0 / 3.0) * (dgd * dw) ** 2 / 48)),
                )
            )
    return rows
