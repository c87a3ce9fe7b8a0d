"""Two-level polarization algebra: Jones vectors, Stokes vectors, density
matrices and the SU(2) -> SO(3) map between Jones unitaries and Stokes
rotations.

Conventions
-----------
s1 = |c_h|^2 - |c_v|^2, s2 = 2 Re(c_h* c_v), s3 = 2 Im(c_h* c_v).
Right-circular light, (1, i)/sqrt(2), sits at s3 = +1.  The Pauli vector is
ordered to match, (sigma_1, sigma_2, sigma_3) = (Z, X, Y), so that
exp(-i theta/2 a.sigma) rotates Stokes vectors by +theta (right hand) about a.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-9
PHASE_TOL = 1e-9

PAULI = np.array(
    [
        [[1, 0], [0, -1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
    ],
    dtype=complex,
)


class NormalizationError(ValueError):
    """Input state is not normalized within tolerance."""


class InvalidDensityMatrixError(ValueError):
    pass


class NonUnitaryError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JonesVector:
    """Pure polarization state in the H/V basis.

    Stored in canonical form: the first component with magnitude above 1e-9
    is made real and non-negative, so that states differing only by a global
    phase compare equal.
    """

    c_h: complex
    c_v: complex

    def __post_init__(self):
        h, v = complex(self.c_h), complex(self.c_v)
        n2 = abs(h) ** 2 + abs(v) ** 2
        if not np.isfinite(n2) or abs(n2 - 1.0) > NORM_TOL:
            raise NormalizationError(f"Jones vector norm^2 = {n2!r}, expected 1")
        n = np.sqrt(n2)
        h, v = h / n, v / n
        lead = h if abs(h) > PHASE_TOL else v
        phase = lead / abs(lead)
        h, v = h / phase, v / phase
        if abs(h) > PHASE_TOL:
            h = complex(h.real, 0.0)
        else:
            v = complex(v.real, 0.0)
        object.__setattr__(self, "c_h", h)
        object.__setattr__(self, "c_v", v)

    @classmethod
    def from_array(cls, a) -> JonesVector:
        a = np.asarray(a, dtype=complex).reshape(2)
        return cls(a[0], a[1])

    @classmethod
    def normalized(cls, c_h: complex, c_v: complex) -> JonesVector:
        """Build from an arbitrary nonzero amplitude pair."""
        n = np.sqrt(abs(c_h) ** 2 + abs(c_v) ** 2)
        if n == 0:
            raise NormalizationError("zero Jones vector")
        return cls(c_h / n, c_v / n)

    @property
    def array(self) -> np.ndarray:
        return np.array([self.c_h, self.c_v], dtype=complex)

    def projector(self) -> np.ndarray:
        a = self.array
        return np.outer(a, a.conj())


@dataclass(frozen=True)
class StokesVector:
    """Normalized Stokes vector (s1, s2, s3); unit norm for pure states."""

    s1: float
    s2: float
    s3: float

    @classmethod
    def from_array(cls, a) -> StokesVector:
        a = np.asarray(a, dtype=float).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3], dtype=float)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.array))

    def unit(self) -> StokesVector:
        n = self.norm
        if n == 0:
            raise NormalizationError("zero Stokes vector has no direction")
        return StokesVector.from_array(self.array / n)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray = field(repr=True)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise InvalidDensityMatrixError(f"expected 2x2 matrix, got {m.shape}")
        if not np.allclose(m, m.conj().T, atol=NORM_TOL, rtol=0):
            raise InvalidDensityMatrixError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > NORM_TOL:
            raise InvalidDensityMatrixError(f"trace {np.trace(m).real:.12g} != 1")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -NORM_TOL:
            raise InvalidDensityMatrixError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def pure(cls, j: JonesVector) -> DensityMatrix:
        return cls(j.projector())

    @classmethod
    def mixture(cls, states, weights=None) -> DensityMatrix:
        """Convex combination of pure states (weights default to uniform)."""
        arr = np.array([s.array for s in states])
        w = np.full(len(arr), 1.0 / len(arr)) if weights is None else np.asarray(weights, float)
        return cls(np.einsum("k,ki,kj->ij", w / w.sum(), arr, arr.conj()))

    def bloch(self) -> np.ndarray:
        """Stokes (Bloch) vector tr(rho sigma_k); its norm is the DOP."""
        return np.real(np.einsum("kij,ji->k", PAULI, self.matrix))


@dataclass(frozen=True, eq=False)
class JonesUnitary:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2) or not np.allclose(
            m.conj().T @ m, np.eye(2), atol=NORM_TOL, rtol=0
        ):
            raise NonUnitaryError("matrix is not a 2x2 unitary")
        object.__setattr__(self, "matrix", _frozen(m))

    def __matmul__(self, other):
        if isinstance(other, JonesUnitary):
            return JonesUnitary(self.matrix @ other.matrix)
        if isinstance(other, JonesVector):
            return JonesVector.from_array(self.matrix @ other.array)
        return NotImplemented

    @property
    def H(self) -> JonesUnitary:
        return JonesUnitary(self.matrix.conj().T)


@dataclass(frozen=True, eq=False)
class PolRotation:
    """Proper rotation of Stokes space (the 3x3 block of a lossless Mueller matrix)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"expected 3x3 matrix, got {m.shape}")
        if not np.allclose(m.T @ m, np.eye(3), atol=NORM_TOL, rtol=0):
            raise ValueError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(m) - 1.0) > NORM_TOL:
            raise ValueError("rotation matrix has det != +1")
        object.__setattr__(self, "matrix", _frozen(m))

    def __matmul__(self, other):
        if isinstance(other, PolRotation):
            return PolRotation(self.matrix @ other.matrix)
        if isinstance(other, StokesVector):
            return StokesVector.from_array(self.matrix @ other.array)
        return NotImplemented

    @property
    def T(self) -> PolRotation:
        return PolRotation(self.matrix.T)


H = JonesVector(1, 0)
V = JonesVector(0, 1)
D = JonesVector(1 / np.sqrt(2), 1 / np.sqrt(2))
A = JonesVector(1 / np.sqrt(2), -1 / np.sqrt(2))
R = JonesVector(1 / np.sqrt(2), 1j / np.sqrt(2))
L = JonesVector(1 / np.sqrt(2), -1j / np.sqrt(2))

NAMED_STATES = {"H": H, "V": V, "D": D, "A": A, "R": R, "L": L}


# --- array kernels (broadcast over leading axes) -------------------------------

def stokes_of(jones: np.ndarray) -> np.ndarray:
    """Stokes vectors of Jones arrays shaped (..., 2)."""
    h, v = jones[..., 0], jones[..., 1]
    x = h.conj() * v
    return np.stack([abs(h) ** 2 - abs(v) ** 2, 2 * x.real, 2 * x.imag], axis=-1)


def adjoint_rotation(u: np.ndarray) -> np.ndarray:
    """SO(3) images R_ij = tr(sigma_i U sigma_j U^dag) / 2 of unitaries shaped (..., 2, 2)."""
    m = np.einsum("...ab,jbc,...dc->...jad", u, PAULI, u.conj())
    return 0.5 * np.real(np.einsum("iab,...jba->...ij", PAULI, m))


def rodrigues(axes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit axes (..., 3) and angles (...)."""
    axes = np.asarray(axes, dtype=float)
    angles = np.asarray(angles, dtype=float)
    x, y, z = axes[..., 0], axes[..., 1], axes[..., 2]
    c, s = np.cos(angles), np.sin(angles)
    t = 1 - c
    out = np.empty(np.broadcast(x, angles).shape + (3, 3))
    out[..., 0, 0] = c + x * x * t
    out[..., 0, 1] = x * y * t - z * s
    out[..., 0, 2] = x * z * t + y * s
    out[..., 1, 0] = y * x * t + z * s
    out[..., 1, 1] = c + y * y * t
    out[..., 1, 2] = y * z * t - x * s
    out[..., 2, 0] = z * x * t - y * s
    out[..., 2, 1] = z * y * t + x * s
    out[..., 2, 2] = c + z * z * t
    return out


def su2(axes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Jones unitaries exp(-i angle/2 axis.sigma) for axes (..., 3), angles (...)."""
    axes = np.asarray(axes, dtype=float)
    half = 0.5 * np.asarray(angles, dtype=float)
    c, s = np.cos(half), np.sin(half)
    x, y, z = axes[..., 0], axes[..., 1], axes[..., 2]
    out = np.empty(np.broadcast(x, half).shape + (2, 2), dtype=complex)
    # a.sigma = [[x, y - iz], [y + iz, -x]]
    out[..., 0, 0] = c - 1j * s * x
    out[..., 0, 1] = -1j * s * (y - 1j * z)
    out[..., 1, 0] = -1j * s * (y + 1j * z)
    out[..., 1, 1] = c + 1j * s * x
    return out


def rotation_angle_axis(r: np.ndarray):
    """Angle in [0, pi] and unit axis of rotation matrices (..., 3, 3).

    The angle uses atan2(|antisymmetric part|, (tr - 1)/2), which equals the
    arccos form but keeps full precision near 0.  Where the angle vanishes the
    axis is returned as (1, 0, 0).
    """
    w = 0.5 * np.stack(
        [r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]],
        axis=-1,
    )
    sin_a = np.linalg.norm(w, axis=-1)
    cos_a = np.clip(0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    angle = np.arctan2(sin_a, cos_a)
    with np.errstate(invalid="ignore", divide="ignore"):
        axis = w / sin_a[..., None]
    axis = np.where(sin_a[..., None] > 0, axis, np.array([1.0, 0.0, 0.0]))
    return angle, axis


# --- public operations ----------------------------------------------------------

def jones_to_stokes(j: JonesVector) -> StokesVector:
    n2 = abs(j.c_h) ** 2 + abs(j.c_v) ** 2
    if abs(n2 - 1.0) > NORM_TOL:
        raise NormalizationError(f"Jones vector norm^2 = {n2!r}")
    return StokesVector.from_array(stokes_of(j.array))


def _unit_array(s, what="Stokes vector") -> np.ndarray:
    a = s.array if isinstance(s, StokesVector) else np.asarray(s, dtype=float).reshape(3)
    n = np.linalg.norm(a)
    if abs(n - 1.0) > NORM_TOL:
        raise NormalizationError(f"{what} has norm {n!r}, expected 1")
    return a / n


def stokes_to_jones(s: StokesVector) -> JonesVector:
    """Canonical Jones vector with the given unit Stokes vector."""
    s1, s2, s3 = _unit_array(s)
    # atan2 keeps the polar angle accurate next to the poles, where arccos does not
    theta = np.arctan2(np.hypot(s2, s3), s1)
    phi = np.arctan2(s3, s2)
    return JonesVector(np.cos(theta / 2), np.sin(theta / 2) * np.exp(1j * phi))


def overlap_prob(a: JonesVector, b: JonesVector) -> float:
    """|<a|b>|^2."""
    return float(min(1.0, abs(np.vdot(a.array, b.array)) ** 2))


def fidelity_pure_mixed(s0: JonesVector, rho: DensityMatrix) -> float:
    """<s0|rho|s0>, the fidelity of a mixed state against a pure reference."""
    if not isinstance(rho, DensityMatrix):
        rho = DensityMatrix(rho)
    a = s0.array
    return float(np.real(a.conj() @ rho.matrix @ a))


def rotate_stokes(s: StokesVector, axis, angle: float) -> StokesVector:
    """Right-handed (Rodrigues) rotation of ``s`` by ``angle`` about ``axis``."""
    ax = np.asarray(axis.array if isinstance(axis, StokesVector) else axis, dtype=float)
    n = np.linalg.norm(ax)
    if n == 0:
        raise ValueError("rotation axis must be nonzero")
    return StokesVector.from_array(rodrigues(ax / n, angle) @ s.array)


def rotation_from_unitary(u: JonesUnitary) -> PolRotation:
    if not isinstance(u, JonesUnitary):
        u = JonesUnitary(u)
    return PolRotation(adjoint_rotation(u.matrix))
