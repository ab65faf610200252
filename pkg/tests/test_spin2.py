import numpy as np
import pytest
from hypothesis import given, strategies as st

from kvhybrid.closure import ClosureModel, Phi
from kvhybrid.matfield import pauli_expand
from kvhybrid.phasespace import PhaseSpaceGrid, Polynomial
from kvhybrid.spin2 import (SpinEnergy, SpinHamiltonian, SpinLinearFunctional, SpinModel, SpinQuadraticFunctional,
                            SpinState, WrongQuantumDimension, closure_rhs_in_spin_variables, density_from_spin,
                            gaussian_spin_state, spin_boson, spin_from_density)

from conftest import (band_limited, gaussian, random_bulk_state, random_mixed_state, random_pure_state,
                      spin_boson_hamiltonian)

HARMONIC = Polynomial({(2, 0): 0.5, (0, 2): 0.5})
ZERO = Polynomial()


def constant_field(grid, vec, H0=ZERO):
    return SpinHamiltonian.from_polynomials(grid, H0, tuple(Polynomial({(0, 0): c}) for c in vec))


def random_spin_state(grid, rng, hbar=1.0):
    return spin_from_density(random_bulk_state(grid, rng), hbar)


def test_pauli_examples(grid48):
    D = gaussian(grid48)
    up = spin_from_density(np.array([[1, 0], [0, 0]])[:, :, None, None] * D, hbar=0.7)
    assert np.allclose(up.D, D) and np.allclose(up.s[:2], 0.0) and np.allclose(up.s[2], 0.35 * D)
    mixed = spin_from_density(0.5 * np.eye(2)[:, :, None, None] * D)
    assert np.allclose(mixed.s, 0.0)


@given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(min_value=0.1, max_value=3.0))
def test_pauli_round_trip(seed, hbar):
    g = PhaseSpaceGrid(16, 16)
    r = np.random.default_rng(seed)
    P = pauli_expand(r.normal(size=g.shape), r.normal(size=(3,) + g.shape))
    back = density_from_spin(spin_from_density(P, hbar), hbar)
    assert np.max(np.abs(back - P)) < 1e-14


def test_wrong_dimension_rejected(grid48):
    with pytest.raises(WrongQuantumDimension):
        spin_from_density(np.zeros((3, 3) + grid48.shape))


def test_energy_without_field(grid48, rng):
    H = SpinHamiltonian.from_polynomials(grid48, HARMONIC, (ZERO, ZERO, ZERO))
    state = random_spin_state(grid48, rng)
    expected = grid48.integrate(state.D * (grid48.Q**2 + grid48.P**2) / 2)
    assert abs(SpinModel(grid48, H).energy(state) - expected) < 1e-12


def test_energy_with_uniform_direction(grid48):
    H = spin_boson(grid48)
    state = gaussian_spin_state(grid48, (0.5, 0.5), 1.0, direction=(0.2, 0.5, -0.8))
    expected = grid48.integrate(state.D * H.H0.value + np.sum(state.s * H.field.value, axis=0))
    assert abs(SpinModel(grid48, H).energy(state) - expected) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_energy_matches_matrix_closure(grid48, seed):
    r = np.random.default_rng(seed)
    hbar = 0.8
    P = random_pure_state(grid48, r)
    H = spin_boson_hamiltonian(grid48, hbar=hbar)
    spin = SpinModel(grid48, SpinHamiltonian.from_hybrid(H, hbar), hbar=hbar)
    closure = ClosureModel(grid48, H, hbar=hbar)
    assert abs(spin.energy(spin_from_density(P, hbar)) - closure.energy(P)) < 1e-10


def test_derivatives_for_constant_field_and_uniform_direction(grid48):
    H = constant_field(grid48, (0.3, -0.2, 1.0), HARMONIC)
    state = gaussian_spin_state(grid48, direction=(1.0, 1.0, 0.0))
    d = SpinModel(grid48, H).derivatives(state)
    assert np.allclose(d.g_D.value, H.H0.value, atol=1e-12)
    assert np.allclose(d.g_s.value, H.field.value, atol=1e-12)


def test_derivatives_without_field(grid48, rng):
    H = SpinHamiltonian.from_polynomials(grid48, HARMONIC, (ZERO, ZERO, ZERO))
    d = SpinModel(grid48, H).derivatives(random_spin_state(grid48, rng))
    assert np.allclose(d.g_D.value, H.H0.value) and np.max(np.abs(d.g_s.value)) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_gateaux_derivatives(grid48, seed):
    r = np.random.default_rng(seed)
    model = SpinModel(grid48, spin_boson(grid48))
    state = random_spin_state(grid48, r)
    dD = band_limited(grid48, r)
    ds = np.stack([band_limited(grid48, r) for _ in range(3)])
    e = 1e-5
    plus = SpinState(state.D + e * dD, state.s + e * ds)
    minus = SpinState(state.D - e * dD, state.s - e * ds)
    fd = (model.energy(plus) - model.energy(minus)) / (2 * e)
    d = model.derivatives(state)
    analytic = grid48.integrate(d.g_D.value * dD + np.sum(d.g_s.value * ds, axis=0))
    assert abs(fd - analytic) < 1e-5 * abs(fd)


def test_uniform_precession(grid48):
    B = np.array([0.3, -0.4, 1.2])
    model = SpinModel(grid48, constant_field(grid48, B))
    state = gaussian_spin_state(grid48, direction=(1.0, 0.0, 0.5))
    rhs = model.rhs(state)
    assert np.max(np.abs(rhs.D)) < 1e-14
    expected = np.cross(B[:, None, None], state.s, axis=0)
    assert np.max(np.abs(rhs.s - expected)) < 1e-14


def test_decoupled_transport(grid48, rng):
    H = SpinHamiltonian.from_polynomials(grid48, HARMONIC, (ZERO, ZERO, ZERO))
    model = SpinModel(grid48, H)
    state = spin_from_density(random_pure_state(grid48, rng))
    rhs = model.rhs(state)
    assert np.max(np.abs(rhs.D - grid48.poisson_bracket(HARMONIC, state.D))) < 1e-10
    for k in range(3):
        assert np.max(np.abs(rhs.s[k] - grid48.poisson_bracket(HARMONIC, state.s[k]))) < 1e-10


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("kind", ["pure", "bulk"])
def test_dual_path_identity(grid48, seed, kind):
    r = np.random.default_rng(seed)
    hbar = 0.9
    P = random_pure_state(grid48, r) if kind == "pure" else random_bulk_state(grid48, r)
    H = spin_boson_hamiltonian(grid48, hbar=hbar)
    spin = SpinModel(grid48, SpinHamiltonian.from_hybrid(H, hbar), hbar=hbar)
    state = spin_from_density(P, hbar)
    a = spin.rhs(state)
    b = closure_rhs_in_spin_variables(ClosureModel(grid48, H, hbar=hbar, backend="matrix"), state)
    scale = max(np.max(np.abs(b.D)), np.max(np.abs(b.s)))
    assert max(np.max(np.abs(a.D - b.D)), np.max(np.abs(a.s - b.s))) < 1e-8 * scale


def test_mass_and_energy_rates_vanish(grid48, rng):
    model = SpinModel(grid48, spin_boson(grid48))
    state = spin_from_density(random_pure_state(grid48, rng))
    rhs = model.rhs(state)
    d = model.derivatives(state)
    assert abs(grid48.integrate(rhs.D)) < 1e-10
    power = grid48.integrate(d.g_D.value * rhs.D + np.sum(d.g_s.value * rhs.s, axis=0))
    assert abs(power) < 1e-9


def test_bloch_length_is_transported(grid64, rng):
    # x = |s|/D obeys d_t x + v.grad x = 0 because precession preserves |s|
    model = SpinModel(grid64, spin_boson(grid64))
    state = spin_from_density(random_mixed_state(grid64, rng))
    rhs = model.rhs(state)
    v = model.derivatives(state).velocity
    D, s = state.D, state.s
    x2 = np.sum(s**2, axis=0) / D**2
    dx2 = 2 * np.sum(s * rhs.s, axis=0) / D**2 - 2 * x2 * rhs.D / D
    residual = dx2 + v.q * grid64.partial_q(x2) + v.p * grid64.partial_p(x2)
    mask = D > 1e-3 * D.max()
    assert np.max(np.abs(residual[mask])) < 1e-6 * np.max(np.abs(dx2[mask]))


def test_casimir_examples(grid48):
    model = SpinModel(grid48, spin_boson(grid48), hbar=0.6)
    state = gaussian_spin_state(grid48, direction=(0.0, 1.0, 1.0), hbar=0.6)
    assert abs(model.casimir(state, Phi("power", 0)) - 1.0) < 1e-12
    assert abs(model.casimir(state, Phi("power", 1)) - 0.3) < 1e-10
    with pytest.raises(ValueError):
        model.casimir(state, Phi("power", 1), form="other")


@pytest.mark.parametrize("phi", [Phi("power", 2), Phi("power", 3), Phi("entropy")])
def test_matrix_form_casimir_matches_closure(grid48, rng, phi):
    hbar = 0.8
    P = random_bulk_state(grid48, rng, mixedness=0.5)
    H = spin_boson_hamiltonian(grid48, hbar=hbar)
    spin = SpinModel(grid48, SpinHamiltonian.from_hybrid(H, hbar), hbar=hbar)
    a = spin.casimir(spin_from_density(P, hbar), phi, form="matrix")
    b = ClosureModel(grid48, H, hbar=hbar).casimir(P, phi)
    assert abs(a - b) < 1e-10 * max(1.0, abs(b))


def random_spin_linear(grid, rng):
    a0 = grid.spectral_jet(band_limited(grid, rng))
    a = grid.spectral_jet(np.stack([band_limited(grid, rng) for _ in range(3)]))
    return SpinLinearFunctional(a0, a)


@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_spin_bracket_antisymmetric(seed):
    g = PhaseSpaceGrid(32, 32)
    r = np.random.default_rng(seed)
    model = SpinModel(g, spin_boson(g))
    state = random_spin_state(g, r)
    fams = [random_spin_linear(g, r), SpinQuadraticFunctional(random_spin_linear(g, r), random_spin_linear(g, r)),
            SpinEnergy()]
    for i, f in enumerate(fams):
        for h in fams[i + 1:]:
            a, b = model.bracket(f, h, state), model.bracket(h, f, state)
            assert abs(a + b) <= 1e-12 * max(1.0, abs(a))
        assert abs(model.bracket(f, f, state)) <= 1e-12


def test_spin_bracket_with_energy_generates_dynamics(grid48, rng):
    model = SpinModel(grid48, spin_boson(grid48))
    state = random_spin_state(grid48, rng)
    f = random_spin_linear(grid48, rng)
    rhs = model.rhs(state)
    along = grid48.integrate(rhs.D * f.a0.value + np.sum(rhs.s * f.a.value, axis=0))
    assert abs(model.bracket(f, SpinEnergy(), state) - along) < 1e-8 * abs(along)


def test_casimirs_have_vanishing_rate(grid48, rng):
    model = SpinModel(grid48, spin_boson(grid48))
    state = spin_from_density(random_mixed_state(grid48, rng))
    rhs = model.rhs(state)
    e = 1e-6
    for phi in (Phi("power", 2), Phi("power", 3)):
        fwd = SpinState(state.D + e * rhs.D, state.s + e * rhs.s)
        bwd = SpinState(state.D - e * rhs.D, state.s - e * rhs.s)
        rate = (model.casimir(fwd, phi) - model.casimir(bwd, phi)) / (2 * e)
        assert abs(rate) < 1e-6 * abs(model.casimir(state, phi))
