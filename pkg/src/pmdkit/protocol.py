"""Measurement-basis geometry against the PMD vector.

BB84/BBM92 states live on a 4-state circle (a great circle of the Poincare
sphere); each state's first-order error is the closed-form arc infidelity at
its angle phi to the PMD axis.  Six-state uses the octahedron +-t_k of an
orthonormal triad.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .fiber import (
    FiberRealization,
    SpectralGrid,
    pmd_vector_spectrum,
    transfer_unitary,
)
from .infidelity import (
    ArcParams,
    BandSpec,
    arc_angle,
    closed_form_infidelity,
)
from .mmm import oscillation_half_period
from .polarization import H, V, JonesUnitary, StokesVector, stokes_to_jones

UNIT_TOL = 1e-9
MIN_PSP_DGD_PS = 1e-6
# the two-channel PSP formula assumes sin(phi) = 1 great-circle arcs in both channels
PSP_FORMULA_NOTE = (
    "p_e_psp_two_channel = 2*psp_arc^2/48 assumes a great-circle arc at sin(phi)=1 in "
    "each channel; for a 0.35 rad arc this gives 0.51%, above the 0.4% field estimate "
    "quoted for the same arc, which implies an effective sin^2(phi) of about 0.8"
)


def _unit(v, what="vector") -> np.ndarray:
    a = np.asarray(v.array if isinstance(v, StokesVector) else v, dtype=float).reshape(3)
    n = np.linalg.norm(a)
    if abs(n - 1) > UNIT_TOL:
        raise ValueError(f"{what} must be a unit vector (norm {n:.12g})")
    return a / n


def _perpendicular(n: np.ndarray) -> np.ndarray:
    e = np.eye(3)[int(np.argmin(np.abs(n)))]
    p = e - np.dot(e, n) * n
    return p / np.linalg.norm(p)


@dataclass(frozen=True, eq=False)
class FourStateCircle:
    """Four MUB states on the great circle with unit ``normal``.

    State k (k = 0..3) sits at in-plane angle ``phase + k*pi/2`` measured from
    ``reference``.  Without an explicit reference, the projection of
    (1, 0, 0) onto the plane is used (or of (0, 1, 0) when the normal is
    along s1).  States 0 and 2 form basis Z, states 1 and 3 basis X.
    """

    normal: np.ndarray
    phase: float = 0.0
    reference: np.ndarray | None = None

    def __post_init__(self):
        n = _unit(self.normal, "circle normal")
        if self.reference is None:
            e = np.array([1.0, 0.0, 0.0])
            if abs(np.dot(e, n)) > 1 - 1e-9:
                e = np.array([0.0, 1.0, 0.0])
            ref = e - np.dot(e, n) * n
            ref /= np.linalg.norm(ref)
        else:
            ref = _unit(self.reference, "circle reference")
            if abs(np.dot(ref, n)) > UNIT_TOL:
                raise ValueError("reference direction must lie in the circle plane")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "reference", ref)

    def states(self) -> np.ndarray:
        """(4, 3) Stokes vectors of the four states."""
        v = np.cross(self.normal, self.reference)
        ang = self.phase + np.arange(4) * np.pi / 2
        return np.cos(ang)[:, None] * self.reference + np.sin(ang)[:, None] * v

    def jones_states(self):
        return [stokes_to_jones(StokesVector.from_array(s)) for s in self.states()]


@dataclass(frozen=True)
class ProtocolSpec:
    kind: str
    basis_probs: tuple

    def __post_init__(self):
        probs = tuple(float(p) for p in self.basis_probs)
        expected = {"bb84": 2, "six_state": 3}.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown protocol {self.kind!r}")
        if len(probs) != expected:
            raise ValueError(f"{self.kind} needs {expected} basis probabilities")
        if any(not 0 < p < 1 for p in probs) or abs(sum(probs) - 1) > 1e-12:
            raise ValueError("basis probabilities must lie in (0, 1) and sum to 1")
        object.__setattr__(self, "basis_probs", probs)

    @classmethod
    def bb84(cls, p_z: float = 0.5) -> ProtocolSpec:
        return cls("bb84", (p_z, 1 - p_z))

    @classmethod
    def six_state(cls) -> ProtocolSpec:
        return cls("six_state", (1 / 3, 1 / 3, 1 / 3))


@dataclass(frozen=True)
class ErrorBudget:
    per_state: list
    per_basis: list
    weighted_average: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _folded_angles(states: np.ndarray, axis: np.ndarray) -> np.ndarray:
    # sin^2 phi is symmetric under phi -> pi - phi; atan2 stays accurate near 0
    return np.arctan2(np.linalg.norm(np.cross(states, axis), axis=-1), np.abs(states @ axis))


def state_pmd_angles(circle: FourStateCircle, omega_axis) -> np.ndarray:
    """Angles in [0, pi/2] between each circle state and the PMD axis."""
    return _folded_angles(circle.states(), _unit(omega_axis, "PMD axis"))


def _validate_triad(orientation) -> np.ndarray:
    t = np.asarray(orientation, dtype=float)
    if t.shape != (3, 3) or not np.allclose(t @ t.T, np.eye(3), atol=1e-10, rtol=0):
        raise ValueError("orientation must be an orthonormal triad (rows)")
    return t


def protocol_error_budget(
    protocol: ProtocolSpec, geometry, omega_axis, delta_theta: float
) -> ErrorBudget:
    """Per-state, per-basis and basis-weighted first-order error probabilities.

    ``geometry`` is a FourStateCircle for bb84 and a 3x3 orthonormal triad
    (rows t_k, states +-t_k) for six_state.
    """
    axis = _unit(omega_axis, "PMD axis")
    if protocol.kind == "bb84":
        if not isinstance(geometry, FourStateCircle):
            raise TypeError("bb84 requires a FourStateCircle geometry")
        states = geometry.states()
        basis_index = [(0, 2), (1, 3)]
    else:
        if isinstance(geometry, FourStateCircle):
            raise TypeError("six_state requires an orthonormal triad geometry")
        t = _validate_triad(geometry)
        states = np.concatenate([t, -t])
        basis_index = [(0, 3), (1, 4), (2, 5)]
    phis = _folded_angles(states, axis)
    per_state = [closed_form_infidelity(ArcParams(delta_theta, float(p))) for p in phis]
    per_basis = [0.5 * (per_state[i] + per_state[j]) for i, j in basis_index]
    weighted = float(np.dot(protocol.basis_probs, per_basis))
    return ErrorBudget(per_state, per_basis, weighted)


def six_state_average(orientation, delta_theta: float, omega_axis=(0.0, 0.0, 1.0)) -> float:
    """Equal-weight mean error over the six states; orientation invariant."""
    budget = protocol_error_budget(ProtocolSpec.six_state(), orientation, omega_axis, delta_theta)
    return float(np.mean(budget.per_state))


def random_triad(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random proper orthonormal triad (Haar rotation, QR with sign fix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q.T


def canonical_geometries(omega_axis) -> dict[str, FourStateCircle]:
    """The three reference orientations of a 4-state circle against the PMD axis.

    ``orthogonal``: axis along the circle normal; ``aligned``: axis in the
    plane through states 0 and 2; ``symmetric``: axis in the plane halfway
    between neighbouring states.
    """
    axis = _unit(omega_axis, "PMD axis")
    normal = _perpendicular(axis)
    return {
        "orthogonal": FourStateCircle(axis),
        "aligned": FourStateCircle(normal, 0.0, axis),
        "symmetric": FourStateCircle(normal, np.pi / 4, axis),
    }


@dataclass(frozen=True)
class OrientationResult:
    circle: FourStateCircle
    alpha: float
    budget: ErrorBudget


def optimize_orientation(
    protocol: ProtocolSpec,
    omega_axis,
    delta_theta: float,
    objective: str = "min_weighted",
    ratio: float | None = None,
) -> OrientationResult:
    """Best in-plane angle alpha between basis-Z states and the PMD axis.

    Only circles whose plane contains the axis are searched.  Basis Z errors
    scale as sin^2(alpha) and basis X errors as cos^2(alpha), so

    * ``min_weighted`` puts the more probable basis on the PSPs
      (alpha = 0 if p_Z >= p_X, else pi/2);
    * ``balance_ratio`` returns alpha = arctan(sqrt(ratio)), giving
      error(Z)/error(X) = ratio.
    """
    if protocol.kind != "bb84":
        raise ValueError("orientation optimization applies to 4-state protocols")
    axis = _unit(omega_axis, "PMD axis")
    p_z, p_x = protocol.basis_probs
    if objective == "min_weighted":
        alpha = 0.0 if p_z >= p_x else np.pi / 2
    elif objective == "balance_ratio":
        if ratio is None or not ratio >= 0 or not np.isfinite(ratio):
            raise ValueError(f"unreachable error ratio {ratio!r}; need 0 <= r < inf")
        alpha = float(np.arctan(np.sqrt(ratio)))
    else:
        raise ValueError(f"unknown objective {objective!r}")
    circle = FourStateCircle(_perpendicular(axis), alpha, axis)
    return OrientationResult(circle, alpha, protocol_error_budget(protocol, circle, axis, delta_theta))


def _pmd_at(fiber: FiberRealization, lambda0: float, step_nm: float = 0.01):
    grid = SpectralGrid(np.array([lambda0 - step_nm / 2, lambda0 + step_nm / 2]))
    return pmd_vector_spectrum(fiber, grid)[0]


def alignment_unitaries(fiber: FiberRealization, lambda0: float) -> tuple[JonesUnitary, JonesUnitary]:
    """Controller settings that put the channel PSPs on H/V at ``lambda0``.

    U1 = |H><p1| + |V><p2| maps the output PSPs onto the H/V basis;
    U2 = U1 U(lambda0) reproduces the whole aligned channel at lambda0 for the
    local photon.
    """
    sample = _pmd_at(fiber, lambda0)
    if sample.dgd < MIN_PSP_DGD_PS:
        raise ValueError(f"DGD {sample.dgd:.3g} ps at {lambda0} nm: PSPs undefined")
    p1 = stokes_to_jones(sample.psp)
    p2 = stokes_to_jones(StokesVector.from_array(-sample.psp.array))
    u1 = JonesUnitary(np.outer(H.array, p1.array.conj()) + np.outer(V.array, p2.array.conj()))
    u2 = u1 @ transfer_unitary(fiber, lambda0)
    return u1, u2


@dataclass(frozen=True)
class HigherOrderReport:
    delta_lambda0: float | None
    p_e_osc: float | None
    psp_arc: float
    p_e_psp_two_channel: float
    mean_dgd: float
    first_order_p_e: float
    note: str = field(default=PSP_FORMULA_NOTE)

    def to_dict(self) -> dict:
        return asdict(self)


def psp_two_channel_infidelity(psp_arc: float) -> float:
    return 2 * psp_arc**2 / 48


def _angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.sum(a * b, axis=-1))


def higher_order_report(fiber: FiberRealization, band: BandSpec, grid: SpectralGrid) -> HigherOrderReport:
    """Size of DGD-oscillation and PSP-rotation effects over ``band``.

    dtheta_0 = delta_lambda0 * (mean DGD) * |domega/dlambda| over the band;
    p_e_osc = (dtheta_0/4)^2/48.  psp_arc is the path length traced by the
    PMD direction across the band; ``first_order_p_e`` is the closed-form
    value at sin(phi) = 1 for the band's mean DGD.
    """
    lo, hi = band.center_nm - band.width_nm / 2, band.center_nm + band.width_nm / 2
    wl = grid.wavelengths
    if lo < wl[0] - 1e-9 or hi > wl[-1] + 1e-9:
        raise ValueError("band extends beyond the grid")
    inside = wl[(wl >= lo - 1e-9) & (wl <= hi + 1e-9)]
    if len(inside) < 3:
        raise ValueError("band covers fewer than 3 grid points")
    samples = pmd_vector_spectrum(fiber, SpectralGrid(inside))
    vecs = np.array([s.omega_vec for s in samples])
    dgd = np.linalg.norm(vecs, axis=1)
    mids = np.array([s.wavelength for s in samples])
    mean_dgd = float(dgd.mean())
    first = closed_form_infidelity(ArcParams(arc_angle(mean_dgd, band), np.pi / 2))
    defined = dgd > MIN_PSP_DGD_PS
    if defined.sum() >= 2:
        p = vecs[defined] / dgd[defined, None]
        psp_arc = float(np.sum(_angle_between(p[1:], p[:-1])))
    else:
        psp_arc = 0.0
    dl0 = oscillation_half_period(mids, dgd)
    p_osc = None
    if dl0 is not None:
        dtheta0 = arc_angle(mean_dgd, BandSpec(band.center_nm, dl0))
        p_osc = (dtheta0 / 4) ** 2 / 48
    return HigherOrderReport(dl0, p_osc, psp_arc, psp_two_channel_infidelity(psp_arc), mean_dgd, first)
