import numpy as np
import pytest
from hypothesis import given, strategies as st

from kvhybrid.phasespace import (CovectorField, GridMismatch, Jet, PhaseSpaceGrid, Polynomial, fd8_partial,
                                 poisson_tensor_apply)

from conftest import band_limited, gaussian


def test_sine_derivative_exact(grid64):
    g = grid64
    k = 2 * np.pi / g.Lq
    f = np.sin(k * g.Q)
    assert np.max(np.abs(g.partial_q(f) - k * np.cos(k * g.Q))) < 1e-10
    assert np.max(np.abs(g.partial_p(f))) < 1e-12


def test_constant_has_zero_derivative(grid64):
    f = np.full(grid64.shape, 3.7)
    assert np.max(np.abs(grid64.partial_q(f))) < 1e-14
    assert np.max(np.abs(grid64.partial_p(f))) < 1e-14


def test_spectral_matches_finite_differences(grid64, rng):
    f = band_limited(grid64, rng)
    for axis, deriv, h in ((0, grid64.partial_q, grid64.dq), (1, grid64.partial_p, grid64.dp)):
        assert np.max(np.abs(deriv(f) - fd8_partial(f, axis, h))) < 1e-6


def test_complex_fields_differentiate_componentwise(grid64, rng):
    a, b = band_limited(grid64, rng), band_limited(grid64, rng)
    z = grid64.partial_q(a + 1j * b)
    assert np.allclose(z, grid64.partial_q(a) + 1j * grid64.partial_q(b), atol=1e-13)


def test_shape_mismatch_rejected(grid64):
    with pytest.raises(GridMismatch):
        grid64.partial_q(np.zeros((32, 32)))


def test_canonical_relations(grid64):
    q = Polynomial({(1, 0): 1.0})
    p = Polynomial({(0, 1): 1.0})
    q2 = Polynomial({(2, 0): 1.0})
    assert np.allclose(grid64.poisson_bracket(q, p), 1.0)
    assert np.allclose(grid64.poisson_bracket(q2, p), 2 * grid64.Q)
    assert np.allclose(grid64.poisson_bracket(q, q), 0.0)


def test_hamiltonian_vector_fields(grid64):
    H = Polynomial({(2, 0): 0.5, (0, 2): 0.5})
    X = grid64.hamiltonian_vector_field(H)
    assert np.allclose(X.q, grid64.P) and np.allclose(X.p, -grid64.Q)
    X = grid64.hamiltonian_vector_field(Polynomial({(1, 0): 1.0}))
    assert np.allclose(X.q, 0.0) and np.allclose(X.p, -1.0)


def test_hamiltonian_field_divergence_free(grid64, rng):
    H = band_limited(grid64, rng)
    assert np.max(np.abs(grid64.divergence(grid64.hamiltonian_vector_field(H)))) < 1e-8


def test_quadrature(grid64):
    assert np.isclose(grid64.integrate(np.ones(grid64.shape)), grid64.Lq * grid64.Lp, rtol=1e-14)
    assert abs(grid64.integrate(gaussian(grid64, (0.3, -0.2), 1.0)) - 1.0) < 1e-8
    x = np.exp(-(grid64.Q**2 + grid64.P**2) / 2)
    assert abs(grid64.integrate(x) - 2 * np.pi) < 1e-8


def test_canonical_one_form_at_point():
    g = PhaseSpaceGrid(16, 16, -1.6, 1.6, -1.6, 1.6)
    A = g.canonical_one_form()
    i = int(np.argmin(np.abs(g.q - 0.4)))
    j = int(np.argmin(np.abs(g.p + 1.2)))
    assert A.q[i, j] == pytest.approx(g.p[j]) and A.p[i, j] == 0.0
    assert g.p[j] == pytest.approx(-1.2)


def test_poisson_tensor_raises_covectors():
    v = poisson_tensor_apply(CovectorField(np.array(2.0), np.array(3.0)))
    assert float(v.q) == 3.0 and float(v.p) == -2.0


def test_polynomial_jets_are_exact(grid64):
    f = Polynomial([(3, 1, 2.0), (0, 2, -1.0)])
    j = f.jet(grid64)
    Q, P = grid64.Q, grid64.P
    assert np.allclose(j.d_q, 6 * Q**2 * P)
    assert np.allclose(j.d_p, 2 * Q**3 - 2 * P)
    assert np.allclose(j.d_qp, 6 * Q**2)
    assert np.allclose(j.d_pp, -2.0)


def test_grid_validation():
    with pytest.raises(ValueError):
        PhaseSpaceGrid(6, 16)
    with pytest.raises(ValueError):
        PhaseSpaceGrid(17, 16)
    with pytest.raises(ValueError):
        PhaseSpaceGrid(16, 16, 1.0, -1.0)


def test_jet_requires_second_derivatives_when_asked(grid64):
    j = Jet(np.zeros(grid64.shape), np.zeros(grid64.shape), np.zeros(grid64.shape))
    with pytest.raises(ValueError):
        grid64.jet(j, second=True)


seeds = st.integers(min_value=0, max_value=2**31 - 1)


@given(seeds)
def test_bracket_antisymmetric(seed):
    g = PhaseSpaceGrid(32, 32)
    r = np.random.default_rng(seed)
    f, h = band_limited(g, r), band_limited(g, r)
    assert np.array_equal(g.poisson_bracket(f, h), -g.poisson_bracket(h, f))


@given(seeds)
def test_jacobi_identity(seed):
    g = PhaseSpaceGrid(64, 64)
    r = np.random.default_rng(seed)
    f, h, k = (band_limited(g, r, modes=2) for _ in range(3))
    pb = g.poisson_bracket
    jac = pb(pb(f, h), k) + pb(pb(h, k), f) + pb(pb(k, f), h)
    assert np.max(np.abs(jac)) < 1e-6


@given(seeds)
def test_bracket_integrates_to_zero(seed):
    g = PhaseSpaceGrid(32, 32)
    r = np.random.default_rng(seed)
    assert abs(g.integrate(g.poisson_bracket(band_limited(g, r), band_limited(g, r)))) < 1e-8
