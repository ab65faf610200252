"""Two-level closure dynamics in Bloch variables.

A two-level density ``P`` is carried as the classical density ``D = Tr P``
and the spin density ``s = (hbar/2) Tr(P sigma)``, so that
``P = D/2 + s.sigma / hbar``.  The Hamiltonian ``H0 + (hbar/2) B.sigma``
is carried as ``(H0, B)``.  With ``kappa = s_q x B_p - s_p x B_q`` and
``Phi = s.kappa`` the closure energy reads ``int D H0 + s.B - Phi / D``.

Everything here is written directly in these variables and is independent
of the matrix code in :mod:`kvhybrid.closure`; the two paths are compared in
the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .closure import ClosureModel, Phi, Regularizer, check_degenerate
from .hybrid import HybridHamiltonian
from .matfield import pauli_expand, pauli_project
from .phasespace import Jet, PhaseSpaceGrid, PhaseVectorField, Polynomial


class WrongQuantumDimension(ValueError):
    pass


class SpinState(NamedTuple):
    D: np.ndarray  # (nq, np)
    s: np.ndarray  # (3, nq, np)


def spin_from_density(P: np.ndarray, hbar: float = 1.0) -> SpinState:
    P = np.asarray(P)
    if P.shape[:2] != (2, 2):
        raise WrongQuantumDimension(f"spin variables need n = 2, got {P.shape[0]}")
    p0, p = pauli_project(P)
    return SpinState(2.0 * p0, hbar * p)


def density_from_spin(state: SpinState, hbar: float = 1.0) -> np.ndarray:
    return pauli_expand(0.5 * np.asarray(state.D), np.asarray(state.s) / hbar)


def _cross(a, b):
    return np.stack([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@dataclass
class SpinHamiltonian:
    """``H0 Id + (hbar/2) field . sigma``; ``field`` is a jet of shape ``(3, nq, np)``."""

    H0: Jet
    field: Jet

    @classmethod
    def from_hybrid(cls, H: HybridHamiltonian, hbar: float = 1.0) -> "SpinHamiltonian":
        if H.n != 2:
            raise WrongQuantumDimension(f"spin Hamiltonians need n = 2, got {H.n}")
        h0, field = H.pauli_jets(hbar)
        return cls(h0, field)

    @classmethod
    def from_polynomials(cls, grid: PhaseSpaceGrid, H0: Polynomial,
                         field: tuple[Polynomial, Polynomial, Polynomial]) -> "SpinHamiltonian":
        jets = [f.jet(grid) for f in field]
        stacked = Jet(*(np.stack(parts) for parts in zip(*(j._parts() for j in jets))))
        return cls(H0.jet(grid), stacked)


def spin_boson_polynomials(lam: float = 0.5, omega_s: float = 1.0):
    """``H0 = (q^2 + p^2)/2`` and field ``(lam q, 0, omega_s)``."""
    H0 = Polynomial({(2, 0): 0.5, (0, 2): 0.5})
    field = (Polynomial({(1, 0): lam}), Polynomial(), Polynomial({(0, 0): omega_s}))
    return H0, field


def spin_boson(grid: PhaseSpaceGrid, lam: float = 0.5, omega_s: float = 1.0) -> SpinHamiltonian:
    H0, field = spin_boson_polynomials(lam, omega_s)
    return SpinHamiltonian.from_polynomials(grid, H0, field)


class SpinDerivatives(NamedTuple):
    g_D: Jet  # dh/dD with first derivatives
    g_s: Jet  # dh/ds, shape (3, nq, np), with first derivatives
    velocity: PhaseVectorField


class SpinModel:
    """Closure dynamics of ``(D, s)``.

    ``d_floor``, ``eps`` and ``degenerate_tol`` follow the same policy as
    :class:`kvhybrid.closure.ClosureModel`.
    """

    def __init__(self, grid: PhaseSpaceGrid, H: SpinHamiltonian, hbar: float = 1.0,
                 d_floor: float = 1e-10, degenerate_tol: float = 1e-6, eps: float | None = None):
        self.grid, self.H, self.hbar = grid, H, float(hbar)
        self.d_floor, self.degenerate_tol, self.eps = float(d_floor), float(degenerate_tol), eps

    def _jets(self, state: SpinState, check: bool = True):
        D = self.grid.check(np.asarray(state.D, dtype=float))
        s = self.grid.check(np.asarray(state.s, dtype=float))
        if s.shape[0] != 3:
            raise WrongQuantumDimension("spin density needs three components")
        jet = self.grid.spectral_jet(np.concatenate([D[None], s]), second=True)
        parts = jet._parts()
        jD = Jet(*(x[0] for x in parts))
        js = Jet(*(x[1:] for x in parts))
        reg = Regularizer.of(D, self.d_floor, self.eps)
        if check:
            check_degenerate(D, reg.eps, self.degenerate_tol)
        return jD, js, reg

    def _kappa(self, js: Jet) -> np.ndarray:
        B = self.H.field
        return _cross(js.d_q, B.d_p) - _cross(js.d_p, B.d_q)

    def energy(self, state: SpinState) -> float:
        jD, js, reg = self._jets(state, check=False)
        phi = _dot(js.value, self._kappa(js))
        dens = jD.value * self.H.H0.value + _dot(js.value, self.H.field.value) - reg.inv * phi
        return float(self.grid.integrate(dens))

    def derivatives(self, state: SpinState) -> SpinDerivatives:
        jD, js, reg = self._jets(state)
        H0, B = self.H.H0, self.H.field
        r, r1 = reg.inv, reg.dinv
        w = r * r  # stands for 1/D^2
        s = js.value
        kappa = self._kappa(js)
        phi = _dot(s, kappa)
        beta = jD.d_q * B.d_p - jD.d_p * B.d_q  # {D, B}
        beta_s = _cross(beta, s)
        g_D = H0.value + w * phi
        g_s = B.value - 2.0 * r * kappa - w * beta_s

        first = {"q": (jD.d_q, js.d_q, H0.d_q, B.d_q), "p": (jD.d_p, js.d_p, H0.d_p, B.d_p)}
        second = {"q": (jD.d_qq, jD.d_qp, js.d_qq, js.d_qp, B.d_qq, B.d_qp),
                  "p": (jD.d_qp, jD.d_pp, js.d_qp, js.d_pp, B.d_qp, B.d_pp)}
        dgD, dgs = {}, {}
        for j in ("q", "p"):
            Dj, sj, H0j, Bj = first[j]
            Djq, Djp, sjq, sjp, Bjq, Bjp = second[j]
            kappa_j = _cross(sjq, B.d_p) + _cross(js.d_q, Bjp) - _cross(sjp, B.d_q) - _cross(js.d_p, Bjq)
            phi_j = _dot(sj, kappa) + _dot(s, kappa_j)
            beta_j = Djq * B.d_p + jD.d_q * Bjp - Djp * B.d_q - jD.d_p * Bjq
            rj = r1 * Dj
            wj = 2.0 * r * rj
            dgD[j] = H0j + wj * phi + w * phi_j
            dgs[j] = Bj - 2.0 * (rj * kappa + r * kappa_j) \
                - wj * beta_s - w * (_cross(beta_j, s) + _cross(beta, sj))

        vq = dgD["p"] + r * _dot(s, dgs["p"])
        vp = -(dgD["q"] + r * _dot(s, dgs["q"]))
        return SpinDerivatives(Jet(g_D, dgD["q"], dgD["p"]), Jet(g_s, dgs["q"], dgs["p"]),
                               PhaseVectorField(vq, vp))

    def rhs(self, state: SpinState) -> SpinState:
        """``d_t D = -div(D v)``, ``d_t s = -div(s v) + (dh/ds) x s``.

        The transport terms are kept in flux form so that ``int D`` and
        ``int s`` change only through the precession term.
        """
        d = self.derivatives(state)
        v = d.velocity
        comps = np.concatenate([np.asarray(state.D)[None], np.asarray(state.s)])
        div = self.grid.divergence(PhaseVectorField(comps * v.q, comps * v.p))
        return SpinState(-div[0], -div[1:] + _cross(d.g_s.value, state.s))

    # -- invariants ----------------------------------------------------------

    def bloch_length(self, state: SpinState) -> np.ndarray:
        """Regularized ``|s| / D``; equals ``hbar/2`` for pure conditional states."""
        r = Regularizer.of(np.asarray(state.D), self.d_floor, self.eps).inv
        return np.sqrt(_dot(state.s, state.s)) * r

    def casimir(self, state: SpinState, phi: Phi, form: str = "direct") -> float:
        """``int D phi(|s|/D)`` (``form="direct"``) or the matrix Casimir in spin variables.

        ``form="matrix"`` evaluates ``int D [phi(1/2 + x/hbar) + phi(1/2 - x/hbar)]``
        with ``x = |s|/D``, i.e. ``int D Tr phi(P/D)`` through the eigenvalues of ``P/D``.
        """
        D = np.asarray(state.D, dtype=float)
        x = self.bloch_length(state)
        if form == "direct":
            dens = D * phi.scalar(x)
        elif form == "matrix":
            y = x / self.hbar
            dens = D * (phi.scalar(0.5 + y) + phi.scalar(0.5 - y))
        else:
            raise ValueError(f"unknown Casimir form {form!r}")
        return float(self.grid.integrate(dens))

    def bracket(self, f, g, state: SpinState) -> float:
        """``int s.(f_s x g_s) + int D omega(<X_f>, <X_g>)`` with ``<X_f> = X_{f_D} + (s/D).X_{f_s}``."""
        D, s = np.asarray(state.D), np.asarray(state.s)
        r = Regularizer.of(D, self.d_floor, self.eps).inv
        (a0, a), (b0, b) = f.derivative(self, state), g.derivative(self, state)
        spin = _dot(s, _cross(a.value, b.value))
        aq, ap = a0.d_q + r * _dot(s, a.d_q), a0.d_p + r * _dot(s, a.d_p)
        bq, bp = b0.d_q + r * _dot(s, b.d_q), b0.d_p + r * _dot(s, b.d_p)
        return float(self.grid.integrate(spin + D * (aq * bp - ap * bq)))


class SpinLinearFunctional:
    """``f(D, s) = int D a0 + s.a`` for jets ``a0`` (scalar) and ``a`` (three components)."""

    def __init__(self, a0: Jet, a: Jet):
        self.a0, self.a = a0, a

    def value(self, model: SpinModel, state: SpinState) -> float:
        return float(model.grid.integrate(state.D * self.a0.value + _dot(state.s, self.a.value)))

    def derivative(self, model: SpinModel, state: SpinState) -> tuple[Jet, Jet]:
        return self.a0, self.a


class SpinQuadraticFunctional:
    """``f = a b / int D`` for two linear functionals."""

    def __init__(self, a: SpinLinearFunctional, b: SpinLinearFunctional):
        self.a, self.b = a, b

    def value(self, model: SpinModel, state: SpinState) -> float:
        m = float(model.grid.integrate(state.D))
        return self.a.value(model, state) * self.b.value(model, state) / m

    def derivative(self, model: SpinModel, state: SpinState) -> tuple[Jet, Jet]:
        m = float(model.grid.integrate(state.D))
        va, vb = self.a.value(model, state), self.b.value(model, state)
        ones = np.ones(model.grid.shape)
        zero = np.zeros(model.grid.shape)
        unit = Jet(ones, zero, zero)
        d0 = self.a.a0.scaled(vb / m) + self.b.a0.scaled(va / m) + unit.scaled(-va * vb / m**2)
        ds = self.a.a.scaled(vb / m) + self.b.a.scaled(va / m)
        return d0, ds


class SpinEnergy:
    """The spin energy as a functional for :meth:`SpinModel.bracket`."""

    def value(self, model: SpinModel, state: SpinState) -> float:
        return model.energy(state)

    def derivative(self, model: SpinModel, state: SpinState) -> tuple[Jet, Jet]:
        d = model.derivatives(state)
        return d.g_D, d.g_s


def closure_rhs_in_spin_variables(model: ClosureModel, state: SpinState) -> SpinState:
    """Closure right-hand side mapped through the Pauli isomorphism (for cross-checks)."""
    P = density_from_spin(state, model.hbar)
    return spin_from_density(model.rhs(P), model.hbar)


def gaussian_spin_state(grid: PhaseSpaceGrid, center: tuple[float, float] = (1.0, 0.0),
                        width: float = 0.75, direction: tuple[float, float, float] | Callable = (1.0, 0.0, 0.0),
                        hbar: float = 1.0) -> SpinState:
    """Normalized Gaussian ``D`` with a pure conditional state along ``direction``.

    ``direction`` is a constant vector or a callable ``(Q, P) -> (3, nq, np)``.
    """
    D = np.exp(-((grid.Q - center[0]) ** 2 + (grid.P - center[1]) ** 2) / (2.0 * width**2))
    D = D / grid.integrate(D)
    n = direction(grid.Q, grid.P) if callable(direction) else np.asarray(direction, dtype=float)[:, None, None]
    n = np.broadcast_to(n, (3,) + grid.shape)
    n = n / np.sqrt(_dot(n, n))
    return SpinState(D, 0.5 * hbar * D * n)
