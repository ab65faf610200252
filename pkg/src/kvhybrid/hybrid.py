"""Hybrid wavefunctions: KvH in the classical sector, n-level quantum sector.

A hybrid wavefunction ``Upsilon`` has shape ``(n, nq, np)``.  Hamiltonians
are Hermitian matrix fields of shape ``(n, n, nq, np)`` carried with their
first and second derivatives (:class:`HybridHamiltonian`).
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .matfield import (PAULI, constant_matrix_field, hermitian_defect, mm, mv, outer,
                       pauli_project, tr)
from .phasespace import CovectorField, Jet, PhaseSpaceGrid, Polynomial


class NonHermitianError(ValueError):
    pass


class EmptyMask(ValueError):
    pass


class NotNormalized(ValueError):
    pass


class HybridHamiltonian:
    """Matrix-valued generator ``H(q, p)`` sampled on a grid with exact or spectral derivatives.

    Parameters
    ----------
    grid : PhaseSpaceGrid
    jet : Jet
        Matrix values and derivatives, each of shape ``(n, n, nq, np)``.
        Second derivatives are required.
    """

    def __init__(self, grid: PhaseSpaceGrid, jet: Jet, tol: float = 1e-12):
        if not jet.has_second:
            raise ValueError("hybrid Hamiltonians need second derivatives")
        v = grid.check(jet.value)
        if v.ndim != 4 or v.shape[0] != v.shape[1]:
            raise ValueError(f"expected a square matrix field, got shape {v.shape}")
        defect = hermitian_defect(v)
        if defect > tol:
            raise NonHermitianError(f"generator deviates from Hermitian by {defect:.3e}")
        self.grid = grid
        self.jet = jet
        self.n = v.shape[0]
        self._scalar_jets: tuple[Jet, Jet] | None = None

    @classmethod
    def from_terms(cls, grid: PhaseSpaceGrid, terms: Sequence[tuple[Polynomial, np.ndarray]]) -> "HybridHamiltonian":
        """``sum_k f_k(q, p) M_k`` with polynomial coefficients and constant matrices."""
        parts = None
        for poly, mat in terms:
            mat = np.asarray(mat, dtype=complex)
            pj = poly.jet(grid)
            contrib = [np.einsum("ij,...->ij...", mat, x) for x in pj._parts()]
            parts = contrib if parts is None else [a + b for a, b in zip(parts, contrib)]
        if parts is None:
            raise ValueError("empty Hamiltonian")
        return cls(grid, Jet(*parts))

    @classmethod
    def from_pauli(cls, grid: PhaseSpaceGrid, h0: Polynomial, field: Sequence[Polynomial],
                   hbar: float = 1.0) -> "HybridHamiltonian":
        """Two-level generator ``h0 Id + (hbar/2) field . sigma``."""
        if len(field) != 3:
            raise ValueError("field needs three components")
        terms = [(h0, np.eye(2))] + [(f, 0.5 * hbar * PAULI[k]) for k, f in enumerate(field)]
        return cls.from_terms(grid, terms)

    @classmethod
    def from_array(cls, grid: PhaseSpaceGrid, values: np.ndarray) -> "HybridHamiltonian":
        """Periodic matrix field differentiated spectrally."""
        return cls(grid, grid.spectral_jet(np.asarray(values, dtype=complex), second=True))

    @classmethod
    def constant(cls, grid: PhaseSpaceGrid, matrix: np.ndarray) -> "HybridHamiltonian":
        v = constant_matrix_field(np.asarray(matrix, dtype=complex), grid.shape)
        z = np.zeros_like(v)
        return cls(grid, Jet(v, z, z, z, z, z))

    @property
    def value(self) -> np.ndarray:
        return self.jet.value

    def is_spatially_constant(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.jet.d_q)) <= tol and np.max(np.abs(self.jet.d_p)) <= tol)

    def pauli_jets(self, hbar: float) -> tuple[Jet, Jet]:
        """Scalar part ``H0`` and field ``(H1, H2, H3)`` with ``H = H0 + (hbar/2) H . sigma``."""
        if self.n != 2:
            raise ValueError("Pauli decomposition needs n = 2")
        h0_parts, f_parts = [], []
        for part in self.jet._parts():
            s0, s = pauli_project(part)
            h0_parts.append(s0)
            f_parts.append(s * (2.0 / hbar))
        return Jet(*h0_parts), Jet(*f_parts)


def hybrid_liouvillian_apply(grid: PhaseSpaceGrid, H: HybridHamiltonian, ups: np.ndarray,
                             hbar: float = 1.0) -> np.ndarray:
    """``{i hbar H, Upsilon} + (H - A . X_H) Upsilon`` with matrix ordering ``H`` on the left.

    For ``n = 1`` this is the prequantum operator, with identical arithmetic.
    """
    j = H.jet
    u = grid.spectral_jet(np.asarray(ups, dtype=complex))
    bracket = mv(j.d_q, u.d_p) - mv(j.d_p, u.d_q)
    return 1j * hbar * bracket + mv(j.value - grid.P * j.d_p, ups)


def hybrid_wave_rhs(grid: PhaseSpaceGrid, H: HybridHamiltonian, ups: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    return (-1j / hbar) * hybrid_liouvillian_apply(grid, H, ups, hbar)


def hybrid_density_vanhove(grid: PhaseSpaceGrid, ups: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    """Hybrid density ``U U^+ - div(J A U U^+) + i hbar {U, U^+}`` of a hybrid wavefunction."""
    ups = np.asarray(ups, dtype=complex)
    u = grid.spectral_jet(ups)
    m = outer(ups, ups)
    d_p_m = outer(u.d_p, ups) + outer(ups, u.d_p)
    swirl = 1j * hbar * (outer(u.d_q, u.d_p) - outer(u.d_p, u.d_q))
    return m + (m + grid.P * d_p_m) + swirl


def quantum_density(grid: PhaseSpaceGrid, dens: np.ndarray) -> np.ndarray:
    """Quantum marginal: phase-space integral of a matrix density."""
    return grid.integrate(dens)


def classical_density(dens: np.ndarray) -> np.ndarray:
    """Classical marginal: pointwise trace of a matrix density."""
    return np.real(tr(dens))


class Factorization(NamedTuple):
    chi: np.ndarray
    psi: np.ndarray
    mask: np.ndarray


def exact_factorize(ups: np.ndarray, floor: float = 1e-12) -> Factorization:
    """``Upsilon = chi psi`` with real ``chi = |Upsilon|`` and unit ``psi`` where ``chi > floor``.

    Outside the mask ``psi`` is set to zero.
    """
    ups = np.asarray(ups, dtype=complex)
    chi = np.sqrt(np.sum(np.abs(ups) ** 2, axis=0))
    mask = chi > floor
    if not mask.any():
        raise EmptyMask(f"|Upsilon| <= {floor} everywhere")
    psi = np.where(mask, ups / np.where(mask, chi, 1.0), 0.0)
    return Factorization(chi, psi, mask)


def _require_normalized(psi: np.ndarray, tol: float = 1e-10) -> None:
    norms = np.sqrt(np.sum(np.abs(psi) ** 2, axis=0))
    worst = float(np.max(np.abs(norms - 1.0)))
    if worst > tol:
        raise NotNormalized(f"| |psi| - 1 | reaches {worst:.3e}")


def berry_connection(grid: PhaseSpaceGrid, psi: np.ndarray, hbar: float = 1.0) -> CovectorField:
    """``<psi, -i hbar d psi> = hbar Im <psi | d psi>`` for a unit-norm field."""
    _require_normalized(psi)
    j = grid.spectral_jet(np.asarray(psi, dtype=complex))
    cq = hbar * np.imag(np.sum(np.conj(psi) * j.d_q, axis=0))
    cp = hbar * np.imag(np.sum(np.conj(psi) * j.d_p, axis=0))
    return CovectorField(cq, cp)


def berry_curvature(grid: PhaseSpaceGrid, psi: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    """Coefficient of ``dq^dp`` in the exterior derivative of the Berry connection."""
    _require_normalized(psi)
    j = grid.spectral_jet(np.asarray(psi, dtype=complex))
    return 2.0 * hbar * np.imag(np.sum(np.conj(j.d_q) * j.d_p, axis=0))


def berry_curvature_projector(rho: Jet, hbar: float = 1.0) -> np.ndarray:
    """Same curvature written through the pure-state projector: ``-i hbar Tr(rho [rho_q, rho_p])``."""
    c = mm(rho.d_q, rho.d_p) - mm(rho.d_p, rho.d_q)
    return np.real(-1j * hbar * tr(mm(rho.value, c)))


def classical_density_factorized(grid: PhaseSpaceGrid, chi: np.ndarray, psi: np.ndarray,
                                 hbar: float = 1.0) -> np.ndarray:
    """Classical marginal rebuilt from a factorization ``chi psi``.

    ``D + div[J(sigma + D A_B - D A)]`` where ``sigma`` is the current of ``chi``
    and ``A_B`` the Berry connection of ``psi``.
    """
    chi = np.asarray(chi, dtype=complex)
    jc = grid.spectral_jet(chi)
    dens = np.abs(chi) ** 2
    berry = berry_connection(grid, psi, hbar)
    vq = hbar * np.imag(np.conj(chi) * jc.d_q) + dens * berry.q
    vp = hbar * np.imag(np.conj(chi) * jc.d_p) + dens * berry.p
    # div(J v) = d_q v_p - d_p v_q; the -D A part is expanded by hand
    twist = grid.partial_q(vp) - grid.partial_p(vq)
    return dens + twist + dens + grid.P * grid.partial_p(dens)


def hybrid_energy(grid: PhaseSpaceGrid, H: HybridHamiltonian, ups: np.ndarray, hbar: float = 1.0) -> float:
    """Expectation of the hybrid Liouvillian, conserved by the wave equation."""
    lu = hybrid_liouvillian_apply(grid, H, ups, hbar)
    return float(np.real(grid.integrate(np.sum(np.conj(ups) * lu, axis=0))))


__all__ = [
    "EmptyMask", "Factorization", "HybridHamiltonian", "NonHermitianError", "NotNormalized",
    "berry_connection", "berry_curvature", "berry_curvature_projector", "classical_density",
    "classical_density_factorized", "exact_factorize", "hybrid_density_vanhove",
    "hybrid_energy", "hybrid_liouvillian_apply", "hybrid_wave_rhs", "quantum_density",
]
