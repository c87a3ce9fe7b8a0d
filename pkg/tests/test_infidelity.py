import numpy as np
import pytest

from pmdkit.fiber import PS, FiberRealization, SpectralGrid, Trajectory, dgd_spectrum, omega_of, propagate_trajectory
from pmdkit.infidelity import (
    ArcParams,
    BandSpec,
    analytic_mean_infidelity,
    arc_angle,
    closed_form_infidelity,
    delta_omega,
    dgd_based_infidelity,
    ensemble_mean_infidelity,
    mixed_state,
    quadrature_weights,
    rolling_infidelity,
    small_angle_infidelity,
    trajectory_infidelity,
)
from pmdkit.polarization import D, H, V, DensityMatrix, StokesVector, fidelity_pure_mixed, rodrigues, stokes_to_jones

WL = np.linspace(1300.0, 1301.0, 3)


def arc_trajectory(delta_theta, phi, n):
    """Samples of an arc of angle delta_theta at polar angle phi from the z axis, centered at azimuth 0."""
    start = np.array([np.sin(phi), 0.0, np.cos(phi)])
    angles = np.linspace(-delta_theta / 2, delta_theta / 2, n)
    stokes = rodrigues(np.tile([0.0, 0.0, 1.0], (n, 1)), angles) @ start
    return Trajectory(1300.0 + 0.01 * np.arange(n), stokes)


def test_delta_omega_examples():
    assert delta_omega(BandSpec(1310, 0)) == 0
    assert delta_omega(BandSpec(1310, 2)) == pytest.approx(2.195e12, rel=1e-3)
    assert delta_omega(BandSpec(1310, 4)) == 2 * delta_omega(BandSpec(1310, 2))


def test_arc_angle_examples():
    assert arc_angle(0, BandSpec(1310, 2)) == 0
    assert arc_angle(0.5, BandSpec(1310, 2)) == pytest.approx(1.098, rel=1e-3)
    assert arc_angle(1.0, BandSpec(1310, 2)) == 2 * arc_angle(0.5, BandSpec(1310, 2))


def test_band_validation():
    with pytest.raises(ValueError):
        BandSpec(1310, -1)
    with pytest.raises(ValueError):
        ArcParams(1.0, 2.0)


def test_closed_form_examples():
    assert closed_form_infidelity(ArcParams(2.0, np.pi / 2)) == pytest.approx(0.0793, abs=5e-4)
    assert closed_form_infidelity(ArcParams(0.0, np.pi / 2)) == 0
    assert closed_form_infidelity(ArcParams(1.7, 0.0)) == 0


def test_small_angle_example():
    assert small_angle_infidelity(ArcParams(0.1, np.pi / 2)) == pytest.approx(2.0833e-4, abs=1e-8)
    exact = closed_form_infidelity(ArcParams(0.1, np.pi / 2))
    assert exact == pytest.approx(2.0831e-4, abs=1e-8)
    # leading Taylor term of the relative excess is dtheta^2 / 80
    rel = small_angle_infidelity(ArcParams(0.1, np.pi / 2)) / exact - 1
    assert rel == pytest.approx(0.1**2 / 80, rel=1e-3)
    assert small_angle_infidelity(ArcParams(0.0, 1.0)) == 0


def test_small_angle_relative_error_sweep():
    worst = 0.0
    for dt in np.linspace(0.01, 0.5, 50):
        for phi in np.linspace(0.1, np.pi / 2, 7):
            a = ArcParams(dt, phi)
            worst = max(worst, abs(small_angle_infidelity(a) / closed_form_infidelity(a) - 1))
    assert worst < 0.01


def test_quadrature_weights_exact_on_cubics():
    for n in (3, 4, 5, 8, 21):
        x = np.linspace(0, 1, n)
        w = quadrature_weights(n)
        assert w.sum() == pytest.approx(1, abs=1e-15)
        assert w @ x**3 == pytest.approx(0.25, abs=1e-14)


def test_mixed_state_examples():
    single = Trajectory(np.array([1300.0]), np.array([[0.0, 1.0, 0.0]]))
    assert np.allclose(mixed_state(single).matrix, DensityMatrix.pure(D).matrix, atol=1e-15)
    hv = Trajectory(np.array([1300.0, 1300.5]), np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
    assert np.allclose(mixed_state(hv).matrix, np.eye(2) / 2, atol=1e-12)
    circle = arc_trajectory(2 * np.pi, np.pi / 2, 2001)
    assert np.allclose(mixed_state(circle).matrix, np.eye(2) / 2, atol=1e-6)


def test_trajectory_infidelity_trivial():
    const = Trajectory(WL, np.tile([0.0, 0.6, 0.8], (3, 1)))
    assert trajectory_infidelity(const) == pytest.approx(0, abs=1e-15)
    assert trajectory_infidelity(const, s0=StokesVector(0.0, -0.6, -0.8)) == pytest.approx(1, abs=1e-15)
    with pytest.raises(ValueError):
        trajectory_infidelity(Trajectory(WL[:1], np.array([[1.0, 0, 0]])))


def test_non_uniform_grid_rejected():
    traj = Trajectory(np.array([1300.0, 1300.1, 1300.3]), np.tile([1.0, 0, 0], (3, 1)))
    with pytest.raises(ValueError, match="uniform"):
        trajectory_infidelity(traj)


def test_identity_with_mixed_state_fidelity():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(3, 30))
        s = rng.standard_normal((n, 3))
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        traj = Trajectory(1300 + 0.1 * np.arange(n), s)
        ref = s[rng.integers(n)]
        direct = trajectory_infidelity(traj, s0=StokesVector.from_array(ref))
        via_rho = 1 - fidelity_pure_mixed(stokes_to_jones(StokesVector.from_array(ref)), mixed_state(traj))
        assert abs(direct - via_rho) < 1e-12


@pytest.mark.parametrize("phi", [np.pi / 6, np.pi / 4, np.pi / 2])
def test_arc_quadrature_matches_closed_form(phi):
    for dt in np.linspace(0.0, np.pi, 13):
        n = max(3, int(np.ceil(dt / 0.05)) + 1)
        n += 1 - n % 2
        p = trajectory_infidelity(arc_trajectory(dt, phi, n))
        assert abs(p - closed_form_infidelity(ArcParams(dt, phi))) < 1e-6


def test_waveplate_arc_matches_closed_form():
    tau = 0.3
    f = FiberRealization.waveplate([0, 0, 1], tau)
    grid = SpectralGrid.from_range(1308, 1312, 0.05)
    traj = propagate_trajectory(f, H, grid)
    dt = tau * PS * (omega_of(1308) - omega_of(1312))
    assert abs(trajectory_infidelity(traj) - closed_form_infidelity(ArcParams(dt, np.pi / 2))) < 1e-6


def test_spectral_weight_hook():
    traj = arc_trajectory(1.0, np.pi / 2, 41)
    flat = trajectory_infidelity(traj)
    assert trajectory_infidelity(traj, spectral_weight=lambda wl: np.ones_like(wl)) == pytest.approx(flat, abs=1e-15)
    center = traj.wavelengths[20]
    gauss = trajectory_infidelity(traj, spectral_weight=lambda wl: np.exp(-((wl - center) / 0.1) ** 2))
    # weight concentrated near s0 lowers the error
    assert gauss < flat
    with pytest.raises(ValueError):
        trajectory_infidelity(traj, spectral_weight=lambda wl: np.zeros_like(wl))


def test_rolling_waveplate_is_flat():
    f = FiberRealization.waveplate([1, 0, 0], 0.4)
    grid = SpectralGrid.from_range(1300, 1320, 0.25)
    curve = rolling_infidelity(propagate_trajectory(f, D, grid), 5.0)
    assert len(curve) == len(grid) - 20
    for c, p in curve:
        dt = 0.4 * PS * (omega_of(c - 2.5) - omega_of(c + 2.5))
        assert abs(p - closed_form_infidelity(ArcParams(dt, np.pi / 2))) < 1e-6


def test_rolling_zero_pmd():
    f = FiberRealization.waveplate([1, 0, 0], 0.0)
    curve = rolling_infidelity(propagate_trajectory(f, D, SpectralGrid.from_range(1300, 1320, 0.25)), 5.0)
    assert all(abs(p) < 1e-15 for _, p in curve)


def test_rolling_window_errors():
    traj = propagate_trajectory(FiberRealization.waveplate([1, 0, 0], 0.1), D, SpectralGrid.from_range(1300, 1302, 0.25))
    with pytest.raises(ValueError, match="wider"):
        rolling_infidelity(traj, 5.0)
    with pytest.raises(ValueError, match="narrower"):
        rolling_infidelity(traj, 0.5)


def test_dgd_based_examples():
    wl = 1300 + 0.25 * np.arange(81)
    zeros = dgd_based_infidelity([(w, 0.0) for w in wl], 5.0)
    assert all(p == 0 for _, p in zeros)
    const = dgd_based_infidelity([(w, 0.5) for w in wl], 5.0, centers=[1310.0])
    dt = arc_angle(0.5, BandSpec(1310.0, 5.0))
    assert const[0][1] == pytest.approx(dt**2 / 48, rel=1e-12)


def test_dgd_based_matches_rolling_equatorial():
    # 0.1 ps over 5 nm is a 0.55 rad arc, where the Taylor error is ~0.4%
    f = FiberRealization.waveplate([1, 0, 0], 0.1)
    grid = SpectralGrid.from_range(1300, 1320, 0.25)
    rolling = rolling_infidelity(propagate_trajectory(f, D, grid), 5.0)
    centers = [c for c, _ in rolling]
    bound = dgd_based_infidelity(dgd_spectrum(f, grid), 5.0, centers)
    for (_, p), (_, b) in zip(rolling, bound):
        assert abs(b / p - 1) < 0.01
        assert b >= p - 1e-9


def test_analytic_mean_zero():
    assert analytic_mean_infidelity(0.0, 50, BandSpec(1310, 2)) == 0


def test_ensemble_matches_analytic_small_angle():
    rows = ensemble_mean_infidelity(0.05, [30.0], [1.0], 1000, 3)
    analytic = analytic_mean_infidelity(0.05, 30.0, BandSpec(1310, 1.0))
    assert rows[0].mean == pytest.approx(analytic, rel=0.05)
    assert rows[0].dgd_method == pytest.approx(analytic, rel=0.05)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        ensemble_mean_infidelity(0.05, [10.0], [2.0], 50, 0)
    with pytest.raises(ValueError):
        ensemble_mean_infidelity(0.05, [], [2.0], 100, 0)
    with pytest.raises(ValueError):
        ensemble_mean_infidelity(0.05, [10.0], [2.0], 100, 0, n_samples=20)


def test_ensemble_zero_pmd():
    rows = ensemble_mean_infidelity(0.0, [10.0, 20.0], [2.0], 100, 0)
    assert all(r.mean == pytest.approx(0, abs=1e-14) and r.dgd_method == 0 for r in rows)


def test_hv_symmetric_errors():
    # antipodal launches trace antipodal curves with equal error
    f = FiberRealization.waveplate([0.6, 0.8, 0], 0.3)
    grid = SpectralGrid.from_range(1300, 1320, 0.25)
    ph = rolling_infidelity(propagate_trajectory(f, H, grid), 5.0)
    pv = rolling_infidelity(propagate_trajectory(f, V, grid), 5.0)
    assert np.allclose([p for _, p in ph], [p for _, p in pv], atol=1e-12)
