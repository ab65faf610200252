"""Koopman-van Hove wavefunctions on phase space.

The gauge of the symplectic potential is fixed to ``p dq`` everywhere, so
the phase Lagrangian of a generator ``H`` is ``p dH/dp - H``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .phasespace import FieldLike, PhaseSpaceGrid


class PhaseUndefined(ValueError):
    """The wavefunction vanishes where a phase was requested."""


class MadelungData(NamedTuple):
    amplitude: np.ndarray
    phase: np.ndarray  # NaN where undefined
    current: tuple[np.ndarray, np.ndarray]  # hbar Im(conj(psi) d psi), defined everywhere
    defined: np.ndarray


def phase_lagrangian(grid: PhaseSpaceGrid, H: FieldLike) -> np.ndarray:
    """``A . X_H - H`` for the potential ``p dq``."""
    j = grid.jet(H)
    return grid.P * j.d_p - j.value


def prequantum_apply(grid: PhaseSpaceGrid, H: FieldLike, psi: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    """Apply the prequantum operator ``i hbar {H, psi} - (A . X_H - H) psi``.

    Hermitian in the L2 inner product whenever ``psi`` is resolved and
    contained in the box.
    """
    jh = grid.jet(H)
    jpsi = grid.spectral_jet(np.asarray(psi, dtype=complex))
    bracket = jh.d_q * jpsi.d_p - jh.d_p * jpsi.d_q
    return 1j * hbar * bracket + (jh.value - grid.P * jh.d_p) * psi


def kvh_rhs(grid: PhaseSpaceGrid, H: FieldLike, psi: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    """Time derivative of ``psi`` under ``i hbar d_t psi = L_H psi``."""
    return (-1j / hbar) * prequantum_apply(grid, H, psi, hbar)


def liouville_rhs(grid: PhaseSpaceGrid, H: FieldLike, rho: np.ndarray) -> np.ndarray:
    """Classical Liouville equation ``d_t rho = {H, rho}``."""
    return grid.poisson_bracket(H, rho)


def _shift_term(grid: PhaseSpaceGrid, dens: np.ndarray, d_p_dens: np.ndarray) -> np.ndarray:
    # -div(J A dens) = d_p(p dens), expanded so the non-periodic p is never differentiated
    return dens + grid.P * d_p_dens


def momentum_map_J(grid: PhaseSpaceGrid, psi: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    """Classical density carried by a KvH wavefunction.

    ``|psi|^2 - div(J A |psi|^2) + i hbar {psi, conj(psi)}``; real valued and
    with the same total integral as ``|psi|^2``.
    """
    j = grid.spectral_jet(np.asarray(psi, dtype=complex))
    dens = np.abs(psi) ** 2
    d_p_dens = 2.0 * np.real(np.conj(psi) * j.d_p)
    swirl = -2.0 * hbar * np.imag(j.d_q * np.conj(j.d_p))
    return dens + _shift_term(grid, dens, d_p_dens) + swirl


def momentum_map_J_tangent(grid: PhaseSpaceGrid, psi: np.ndarray, dpsi: np.ndarray,
                           hbar: float = 1.0) -> np.ndarray:
    """Directional derivative of :func:`momentum_map_J` at ``psi`` along ``dpsi``."""
    a = grid.spectral_jet(np.asarray(psi, dtype=complex))
    b = grid.spectral_jet(np.asarray(dpsi, dtype=complex))
    ddens = 2.0 * np.real(np.conj(psi) * dpsi)
    d_p_ddens = 2.0 * np.real(np.conj(a.d_p) * dpsi + np.conj(psi) * b.d_p)
    z = b.d_q * np.conj(a.d_p) - b.d_p * np.conj(a.d_q)
    return ddens + _shift_term(grid, ddens, d_p_ddens) - 2.0 * hbar * np.imag(z)


def madelung_split(grid: PhaseSpaceGrid, psi: np.ndarray, hbar: float = 1.0,
                   floor: float = 1e-12, strict: bool = False) -> MadelungData:
    """Split ``psi = R exp(iS/hbar)``.

    The phase is unwrapped first along the ``q`` axis of the first column,
    then along ``p`` for each row, with branch threshold pi.  Points with
    ``|psi| <= floor`` are left undefined (NaN) unless ``strict`` is set, in
    which case :class:`PhaseUndefined` is raised.
    """
    psi = np.asarray(psi, dtype=complex)
    amp = np.abs(psi)
    defined = amp > floor
    if not defined.any() or (strict and not defined.all()):
        raise PhaseUndefined(f"|psi| <= {floor} at {int((~defined).sum())} grid points")
    angle = np.angle(psi)
    angle[:, 0] = np.unwrap(angle[:, 0])
    angle = np.unwrap(angle, axis=1)
    phase = np.where(defined, hbar * angle, np.nan)
    j = grid.spectral_jet(psi)
    current = (hbar * np.imag(np.conj(psi) * j.d_q), hbar * np.imag(np.conj(psi) * j.d_p))
    return MadelungData(amp, phase, current, defined)
