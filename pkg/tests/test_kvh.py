import numpy as np
import pytest

from kvhybrid.dynamics import IntegratorConfig, KvHSystem, LiouvilleSystem, run
from kvhybrid.kvh import (PhaseUndefined, kvh_rhs, liouville_rhs, madelung_split, momentum_map_J,
                          momentum_map_J_tangent, phase_lagrangian, prequantum_apply)
from kvhybrid.phasespace import PhaseSpaceGrid, Polynomial

from conftest import band_limited, gaussian

HARMONIC = Polynomial({(2, 0): 0.5, (0, 2): 0.5})


def wavepacket(grid, rng, hbar=1.0):
    D = gaussian(grid, rng.uniform(-1, 1, 2), 1.0)
    return np.sqrt(D) * np.exp(1j * band_limited(grid, rng, modes=1) / hbar)


def rotated_gaussian(grid, center, width, t):
    # harmonic flow rotates clockwise: q(t) = q cos t + p sin t, p(t) = p cos t - q sin t
    c, s = np.cos(t), np.sin(t)
    qc = center[0] * c + center[1] * s
    pc = center[1] * c - center[0] * s
    return gaussian(grid, (qc, pc), width)


def test_constant_generator_multiplies(grid64, rng):
    psi = wavepacket(grid64, rng)
    out = prequantum_apply(grid64, np.full(grid64.shape, 2.5), psi)
    assert np.allclose(out, 2.5 * psi, atol=1e-12)


def test_harmonic_on_constant(grid64):
    out = prequantum_apply(grid64, HARMONIC, np.ones(grid64.shape, dtype=complex))
    assert np.allclose(out, (grid64.Q**2 - grid64.P**2) / 2, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_prequantum_operator_hermitian(grid64, seed):
    r = np.random.default_rng(seed)
    H = band_limited(grid64, r)
    a, b = wavepacket(grid64, r), wavepacket(grid64, r)
    lhs = grid64.integrate(np.conj(a) * prequantum_apply(grid64, H, b))
    rhs = grid64.integrate(np.conj(prequantum_apply(grid64, H, a)) * b)
    assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))


def test_constant_generator_keeps_modulus(grid64, rng):
    psi = wavepacket(grid64, rng)
    d = kvh_rhs(grid64, np.full(grid64.shape, 1.3), psi, hbar=0.5)
    assert np.allclose(d, -1j * 1.3 / 0.5 * psi)
    assert np.max(np.abs(np.real(np.conj(psi) * d))) < 1e-14


def test_norm_generator_vanishes(grid64, rng):
    psi = wavepacket(grid64, rng)
    d = kvh_rhs(grid64, HARMONIC, psi)
    assert abs(np.real(grid64.integrate(np.conj(psi) * d))) < 1e-10


def test_phase_lagrangian(grid64):
    assert np.allclose(phase_lagrangian(grid64, HARMONIC), (grid64.P**2 - grid64.Q**2) / 2)


def test_momentum_map_of_constant(grid64):
    assert np.allclose(momentum_map_J(grid64, np.full(grid64.shape, 0.7 + 0j)), 2 * 0.49)


def test_momentum_map_reduces_to_density_when_current_matches_potential(grid64, rng):
    # J(psi) - |psi|^2 = div(J(sigma - D A)), which vanishes exactly when sigma = D A
    psi = wavepacket(grid64, rng)
    g = grid64
    md = madelung_split(g, psi)
    D = np.abs(psi) ** 2
    aq, ap = md.current[0] - D * g.P, md.current[1]
    twist = g.partial_q(ap) - g.partial_p(aq)
    assert np.max(np.abs(momentum_map_J(g, psi) - D - twist)) < 1e-8


def test_momentum_map_preserves_normalization(grid64, rng):
    psi = wavepacket(grid64, rng)
    assert abs(grid64.integrate(momentum_map_J(grid64, psi)) - grid64.integrate(np.abs(psi) ** 2)) < 1e-8


def test_momentum_map_tangent_matches_finite_difference(grid64, rng):
    psi, dpsi = wavepacket(grid64, rng), wavepacket(grid64, rng)
    e = 1e-6
    fd = (momentum_map_J(grid64, psi + e * dpsi) - momentum_map_J(grid64, psi - e * dpsi)) / (2 * e)
    assert np.max(np.abs(fd - momentum_map_J_tangent(grid64, psi, dpsi))) < 1e-6


def test_madelung_plane_wave():
    g = PhaseSpaceGrid(32, 32, -np.pi, np.pi, -np.pi, np.pi)
    md = madelung_split(g, np.exp(1j * g.Q))
    assert np.allclose(md.amplitude, 1.0)
    offset = md.phase - g.Q
    assert np.allclose(offset, offset[0, 0]) and np.isclose(offset[0, 0] / (2 * np.pi), round(offset[0, 0] / (2 * np.pi)))
    assert np.allclose(md.current[0], 1.0) and np.allclose(md.current[1], 0.0, atol=1e-12)


def test_madelung_real_positive(grid64):
    md = madelung_split(grid64, np.sqrt(gaussian(grid64)) + 0j, floor=0.0)
    assert np.allclose(md.phase[md.defined], 0.0)
    assert np.allclose(md.current[0], 0.0) and np.allclose(md.current[1], 0.0)


def test_madelung_current_matches_density_times_phase_gradient(grid64, rng):
    S = band_limited(grid64, rng, modes=1)
    R = 1.0 + 0.2 * band_limited(grid64, rng)
    psi = R * np.exp(1j * S)
    md = madelung_split(grid64, psi)
    D = R**2
    assert np.max(np.abs(md.current[0] - D * grid64.partial_q(S))) < 1e-6
    assert np.max(np.abs(md.current[1] - D * grid64.partial_p(S))) < 1e-6


def test_madelung_floor_masks_phase(grid64):
    psi = np.zeros(grid64.shape, dtype=complex)
    psi[10, 10] = 1.0
    md = madelung_split(grid64, psi, floor=1e-12)
    assert np.isnan(md.phase[0, 0]) and md.defined.sum() == 1
    with pytest.raises(PhaseUndefined):
        madelung_split(grid64, psi, strict=True)


def test_madelung_equations_along_kvh(grid64, rng):
    g = grid64
    S = band_limited(g, rng, modes=1)
    R = np.sqrt(gaussian(g, (0.5, -0.3), 1.0))
    psi = R * np.exp(1j * S)
    dpsi = kvh_rhs(g, HARMONIC, psi)
    dR = np.real(np.conj(psi) * dpsi) / R
    dS = np.imag(dpsi / psi)
    mask = R > 0.1 * R.max()
    res_R = dR + g.poisson_bracket(R, HARMONIC)
    res_S = dS + g.poisson_bracket(S, HARMONIC) - phase_lagrangian(g, HARMONIC)
    assert np.max(np.abs(res_R[mask])) < 1e-6
    assert np.max(np.abs(res_S[mask])) < 1e-6


def test_liouville_stationary_and_conservative(grid64):
    rho = np.exp(-(grid64.Q**2 + grid64.P**2) / 2)
    assert np.max(np.abs(liouville_rhs(grid64, HARMONIC, rho))) < 1e-10
    rho = gaussian(grid64, (1.0, 0.5), 0.8)
    assert abs(grid64.integrate(liouville_rhs(grid64, HARMONIC, rho))) < 1e-10


def test_kvh_rotation_quarter_period():
    g = PhaseSpaceGrid(64, 64)
    D0 = gaussian(g, (1.0, 0.0), 0.75)
    system = KvHSystem(g, HARMONIC)
    res = run(system, np.sqrt(D0) + 0j, IntegratorConfig(dt=2e-3, t_final=np.pi / 2, snapshot_every=10**6))
    expected = rotated_gaussian(g, (1.0, 0.0), 0.75, res.t)
    dens = np.abs(res.state) ** 2
    assert np.sqrt(np.sum((dens - expected) ** 2) / np.sum(expected**2)) < 1e-4


def test_liouville_rotation_quarter_period():
    g = PhaseSpaceGrid(64, 64)
    res = run(LiouvilleSystem(g, HARMONIC), gaussian(g, (1.0, 0.0), 0.75),
              IntegratorConfig(dt=2e-3, t_final=np.pi / 2, snapshot_every=10**6))
    expected = rotated_gaussian(g, (1.0, 0.0), 0.75, res.t)
    assert np.sqrt(np.sum((res.state - expected) ** 2) / np.sum(expected**2)) < 1e-6
