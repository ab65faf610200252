"""Closure model for hybrid quantum-classical dynamics.

The state is a Hermitian matrix field ``P`` (shape ``(n, n, nq, np)``) whose
pointwise trace ``D`` is the classical density.  For pure conditional
states ``P = D psi psi^+``.  Energy::

    h(P) = int Tr(P H) + (i hbar / 2D) Tr(P [dP, X_H])

where ``[dP, X_H] = [P_q, H_p] - [P_p, H_q]``.  Dynamics::

    i hbar d_t P + i hbar div(P <X_G>) = [G, P],    G = dh/dP

with ``<A> = Tr(P A) / D``.  Every ``1/D`` is replaced by the regularized
``D / (D^2 + eps^2)``, ``eps = d_floor * max|D|``, and derivatives of such
quotients are expanded with the product rule so that a regularized quotient
is never differentiated spectrally.  Averages keep ``<Id> = 1`` exactly (see
:func:`average`); otherwise the transport speed of the scalar part would
depend on ``D`` near the floor and steepen into shocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .hybrid import HybridHamiltonian
from .matfield import (comm, dag, mm, pack_hermitian, pauli_expand, pauli_project, times_identity, tr,
                       tr_mm, unpack_hermitian)
from .phasespace import Jet, PhaseSpaceGrid, PhaseVectorField


class DegenerateDensity(ValueError):
    """Too much of the classical density sits below the regularization floor."""


def hcomm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Commutator of two Hermitian fields with a single matrix product."""
    ab = mm(a, b)
    return ab - dag(ab)


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dag(a))


@dataclass
class Regularizer:
    """Regularized reciprocal ``r(D) = D/(D^2+eps^2)`` and its derivative in ``D``."""

    eps: float
    inv: np.ndarray
    dinv: np.ndarray

    @classmethod
    def of(cls, D: np.ndarray, d_floor: float, eps: float | None = None) -> "Regularizer":
        """``eps = d_floor * max|D|`` unless an absolute ``eps`` is given."""
        if eps is None:
            eps = d_floor * float(np.max(np.abs(D)))
        den = D * D + eps * eps
        if eps == 0.0:
            raise DegenerateDensity("classical density vanishes identically")
        return cls(eps, D / den, (eps * eps - D * D) / (den * den))


def check_degenerate(D: np.ndarray, eps: float, tol: float) -> None:
    """Raise :class:`DegenerateDensity` if more than ``tol`` of ``int |D|`` lies where ``D < eps``."""
    total = float(np.sum(np.abs(D)))
    low = float(np.sum(np.abs(D[D < eps])))
    if total == 0.0 or low > tol * total:
        raise DegenerateDensity(
            f"{low / max(total, 1e-300):.3e} of the density lies below the floor {eps:.3e}")


def average(P: np.ndarray, A: np.ndarray, D: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Regularized ``Tr(P A) / D`` for Hermitian ``A``.

    Only the traceless part of ``A`` is divided by ``D``; the identity part
    passes through exactly, so ``<Id> = 1`` even where ``D`` is below the floor.
    """
    n = P.shape[0]
    mean = np.real(tr(A)) / n
    return mean * (1.0 - inv * D) + inv * np.real(tr_mm(P, A))


class StateJet(NamedTuple):
    P: Jet  # with second derivatives
    D: Jet
    reg: Regularizer


class Derivatives(NamedTuple):
    """Variational derivatives and the transport velocity at one state."""

    G: Jet  # dh/dP of the single-variable energy, first derivatives only
    g_D: Jet  # dh/dD in the split formulation (scalar)
    velocity: PhaseVectorField


class ClosureModel:
    """Energy, variational calculus and dynamics of the closure model.

    Parameters
    ----------
    grid : PhaseSpaceGrid
    H : HybridHamiltonian
    hbar : float
    d_floor : float
        Relative regularization floor for divisions by ``D``.
    degenerate_tol : float
        Largest admissible fraction of ``int |D|`` living where ``D < eps``.
    backend : {"auto", "matrix", "pauli"}
        ``pauli`` is a real-vector kernel for two-level systems; ``auto`` picks it when n = 2.
    eps : float, optional
        Absolute regularization width overriding ``d_floor``.
    """

    def __init__(self, grid: PhaseSpaceGrid, H: HybridHamiltonian, hbar: float = 1.0,
                 d_floor: float = 1e-10, degenerate_tol: float = 1e-6, backend: str = "auto",
                 eps: float | None = None):
        if not grid.same_as(H.grid):
            raise ValueError("Hamiltonian sampled on a different grid")
        self.grid, self.H, self.hbar = grid, H, float(hbar)
        self.d_floor = float(d_floor)
        self.eps = eps
        self.degenerate_tol = float(degenerate_tol)
        self.n = H.n
        if backend == "auto":
            backend = "pauli" if self.n == 2 else "matrix"
        if backend not in ("matrix", "pauli") or (backend == "pauli" and self.n != 2):
            raise ValueError(f"backend {backend!r} unavailable for n = {self.n}")
        self.backend = backend
        if self.n == 2:
            # H = h0 Id + h . sigma, every jet component projected once
            parts = [pauli_project(x) for x in H.jet._parts()]
            self._h0 = Jet(*(a for a, _ in parts))
            self._hv = Jet(*(b for _, b in parts))
            # with a spatially constant quantum field every correction term vanishes identically
            self._coupled = bool(np.any(self._hv.d_q) or np.any(self._hv.d_p))

    # -- state preparation -------------------------------------------------

    def state_jet(self, P: np.ndarray, check: bool = True) -> StateJet:
        P = self.grid.check(np.asarray(P, dtype=complex))
        if P.shape[:2] != (self.n, self.n):
            raise ValueError(f"state has {P.shape[:2]} levels, Hamiltonian has {self.n}")
        packed = self.grid.spectral_jet(pack_hermitian(P), second=True)
        jp = Jet(*(unpack_hermitian(x, self.n) for x in packed._parts()))
        jd = Jet(*(np.sum(x[: self.n], axis=0) for x in packed._parts()))
        reg = Regularizer.of(jd.value, self.d_floor, self.eps)
        if check:
            self._check_degenerate(jd.value, reg.eps)
        return StateJet(jp, jd, reg)

    def _check_degenerate(self, D: np.ndarray, eps: float) -> None:
        check_degenerate(D, eps, self.degenerate_tol)

    # -- energy ----------------------------------------------------------

    def _kernel(self, jp: Jet) -> np.ndarray:
        """``[dP, X_H] = [P_q, H_p] - [P_p, H_q]`` (anti-Hermitian)."""
        h = self.H.jet
        return hcomm(jp.d_q, h.d_p) - hcomm(jp.d_p, h.d_q)

    def energy(self, P: np.ndarray) -> float:
        s = self.state_jet(P, check=False)
        K = self._kernel(s.P)
        dens = np.real(tr_mm(s.P.value, self.H.value)) \
            + np.real(0.5j * self.hbar * s.reg.inv * tr_mm(s.P.value, K))
        return float(self.grid.integrate(dens))

    # -- variational derivatives ---------------------------------------------

    def derivatives(self, P: np.ndarray | StateJet, backend: str | None = None) -> Derivatives:
        """``G = dh/dP`` with its first derivatives, ``dh/dD`` and the velocity ``<X_G>``."""
        if (backend or self.backend) == "pauli" and not isinstance(P, StateJet):
            g0, g, gD, vel = self._derivatives_pauli(self._pauli_state(P))
            G = Jet(*(pauli_expand(a, b) for a, b in zip(g0._parts()[:3], g._parts()[:3])))
            return Derivatives(G, gD, vel)
        s = P if isinstance(P, StateJet) else self.state_jet(P)
        return self._derivatives_numpy(s)

    def _derivatives_numpy(self, s: StateJet) -> Derivatives:
        jp, jd, reg = s
        h = self.H.jet
        ih = 1j * self.hbar
        # 1/D^2 becomes r^2; its derivative 2 r r' D_j
        r, r1 = reg.inv, reg.dinv
        w = r * r
        Pv = jp.value

        K = self._kernel(jp)
        B = jd.d_q * h.d_p - jd.d_p * h.d_q  # {D, H}
        BP = hcomm(B, Pv)
        TK = tr_mm(Pv, K)
        g_D = np.real(-0.5 * ih * w * TK)
        G = h.value + ih * r * K + 0.5 * ih * w * BP + times_identity(g_D, self.n)

        # first derivatives by the product rule; second derivatives of P are spectral
        dP2 = {"q": (jp.d_qq, jp.d_qp), "p": (jp.d_qp, jp.d_pp)}
        dD2 = {"q": (jd.d_qq, jd.d_qp), "p": (jd.d_qp, jd.d_pp)}
        dH2 = {"q": (h.d_qq, h.d_qp), "p": (h.d_qp, h.d_pp)}
        first = {"q": (jp.d_q, jd.d_q, h.d_q), "p": (jp.d_p, jd.d_p, h.d_p)}
        dG, dgD = {}, {}
        for j in ("q", "p"):
            Pj, Dj, Hj = first[j]
            Pjq, Pjp = dP2[j]
            Djq, Djp = dD2[j]
            Hjq, Hjp = dH2[j]
            Kj = hcomm(Pjq, h.d_p) + hcomm(jp.d_q, Hjp) - hcomm(Pjp, h.d_q) - hcomm(jp.d_p, Hjq)
            Bj = Djq * h.d_p + jd.d_q * Hjp - Djp * h.d_q - jd.d_p * Hjq
            rj = r1 * Dj
            wj = 2.0 * r * rj
            TKj = tr_mm(Pj, K) + tr_mm(Pv, Kj)
            gDj = np.real(-0.5 * ih * (wj * TK + w * TKj))
            dG[j] = (Hj + ih * (rj * K + r * Kj)
                     + 0.5 * ih * (wj * BP + w * (hcomm(Bj, Pv) + hcomm(B, Pj)))
                     + times_identity(gDj, self.n))
            dgD[j] = gDj

        vq = average(Pv, dG["p"], jd.value, r)
        vp = -average(Pv, dG["q"], jd.value, r)
        return Derivatives(Jet(G, dG["q"], dG["p"]), Jet(g_D, dgD["q"], dgD["p"]),
                           PhaseVectorField(vq, vp))

    # -- two-level backend -----------------------------------------------------
    #
    # For n = 2 write P = p0 Id + p.sigma and H = h0 Id + h.sigma.  Commutators
    # become cross products, [a.sigma, b.sigma] = 2i (a x b).sigma, and every
    # term of the matrix formulas is real vector algebra:
    #   K = i k.sigma,  k = 2(p_q x h_p - p_p x h_q)
    #   dh/dD = hbar r^2 p.k
    #   G = (h0 + dh/dD) Id + (h - hbar r k - hbar r^2 b x p).sigma,  b = D_q h_p - D_p h_q

    def _pauli_state(self, P: np.ndarray, check: bool = True):
        P = self.grid.check(np.asarray(P))
        p0, pv = pauli_project(P)
        jet = self.grid.spectral_jet(np.concatenate([p0[None], pv]), second=True)
        parts = jet._parts()
        jp0 = Jet(*(x[0] for x in parts))
        jpv = Jet(*(x[1:] for x in parts))
        reg = Regularizer.of(2.0 * p0, self.d_floor, self.eps)
        if check:
            self._check_degenerate(2.0 * p0, reg.eps)
        return jp0, jpv, reg

    def _derivatives_pauli(self, state):
        jp0, jp, reg = state
        h0, h = self._h0, self._hv
        hb = self.hbar
        r, r1 = reg.inv, reg.dinv
        w = r * r
        p = jp.value
        Dq, Dp = 2.0 * jp0.d_q, 2.0 * jp0.d_p

        k = 2.0 * (_cross(jp.d_q, h.d_p) - _cross(jp.d_p, h.d_q))
        b = Dq * h.d_p - Dp * h.d_q
        bp = _cross(b, p)
        pk = _dot(p, k)
        gD = hb * w * pk
        g = h.value - hb * r * k - hb * w * bp

        second = {"q": (jp.d_qq, jp.d_qp, jp0.d_qq, jp0.d_qp, h.d_qq, h.d_qp),
                  "p": (jp.d_qp, jp.d_pp, jp0.d_qp, jp0.d_pp, h.d_qp, h.d_pp)}
        first = {"q": (jp.d_q, 2.0 * jp0.d_q, h0.d_q, h.d_q), "p": (jp.d_p, 2.0 * jp0.d_p, h0.d_p, h.d_p)}
        g0j, gj, gDj = {}, {}, {}
        for j in ("q", "p"):
            pj, Dj, h0j, hj = first[j]
            pjq, pjp, p0jq, p0jp, hjq, hjp = second[j]
            kj = 2.0 * (_cross(pjq, h.d_p) + _cross(jp.d_q, hjp) - _cross(pjp, h.d_q) - _cross(jp.d_p, hjq))
            bj = 2.0 * p0jq * h.d_p + Dq * hjp - 2.0 * p0jp * h.d_q - Dp * hjq
            rj = r1 * Dj
            wj = 2.0 * r * rj
            gDj[j] = hb * (wj * pk + w * (_dot(pj, k) + _dot(p, kj)))
            g0j[j] = h0j + gDj[j]
            gj[j] = hj - hb * (rj * k + r * kj) - hb * (wj * bp + w * (_cross(bj, p) + _cross(b, pj)))

        # the identity part of G is averaged exactly, <Id> = 1
        vq = g0j["p"] + 2.0 * r * _dot(p, gj["p"])
        vp = -(g0j["q"] + 2.0 * r * _dot(p, gj["q"]))
        return (Jet(h0.value + gD, g0j["q"], g0j["p"]), Jet(g, gj["q"], gj["p"]),
                Jet(gD, gDj["q"], gDj["p"]), PhaseVectorField(vq, vp))

    def _rhs_pauli(self, P: np.ndarray) -> np.ndarray:
        if not self._coupled:
            return self._rhs_pauli_uncoupled(P)
        state = self._pauli_state(P)
        _, g, _, vel = self._derivatives_pauli(state)
        jp0, jp, _ = state
        comps = np.concatenate([jp0.value[None], jp.value])
        div = self.grid.divergence(PhaseVectorField(comps * vel.q, comps * vel.p))
        dp = -div[1:] + (2.0 / self.hbar) * _cross(g.value, jp.value)
        return pauli_expand(-div[0], dp)

    def _rhs_pauli_uncoupled(self, P: np.ndarray) -> np.ndarray:
        p0, p = pauli_project(self.grid.check(np.asarray(P)))
        reg = Regularizer.of(2.0 * p0, self.d_floor, self.eps)
        self._check_degenerate(2.0 * p0, reg.eps)
        h0 = self._h0
        vq, vp = h0.d_p, -h0.d_q
        comps = np.concatenate([p0[None], p])
        div = self.grid.divergence(PhaseVectorField(comps * vq, comps * vp))
        dp = -div[1:] + (2.0 / self.hbar) * _cross(self._hv.value, p)
        return pauli_expand(-div[0], dp)

    def variational_derivative(self, P: np.ndarray) -> np.ndarray:
        """``dh/dP`` of the single-variable energy (``D = Tr P`` slaved)."""
        return self.derivatives(P).G.value

    def split_derivatives(self, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(dh/dD, dh/dP)`` with ``D`` treated as an independent variable."""
        d = self.derivatives(P)
        return d.g_D.value, d.G.value - times_identity(d.g_D.value, self.n)

    # -- dynamics ----------------------------------------------------------

    def rhs(self, P: np.ndarray) -> np.ndarray:
        """``d_t P = -div(P <X_G>) + [G, P] / (i hbar)``."""
        if self.backend == "pauli":
            return self._rhs_pauli(P)
        s = self.state_jet(P)
        d = self.derivatives(s)
        Pv = s.P.value
        transport = self._hermitian_divergence(Pv * d.velocity.q, Pv * d.velocity.p)
        return hermitize(-transport + hcomm(d.G.value, Pv) / (1j * self.hbar))

    def _hermitian_divergence(self, fq: np.ndarray, fp: np.ndarray) -> np.ndarray:
        div = self.grid.divergence(PhaseVectorField(pack_hermitian(fq), pack_hermitian(fp)))
        return unpack_hermitian(div, self.n)

    def split_rhs(self, D: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Two-variable form with brackets expanded instead of divergences.

        Agrees with :meth:`rhs` to discretization accuracy when ``D = Tr P``;
        used as an independent cross-check.
        """
        s = self.state_jet(P)
        d = self.derivatives(s)
        jp, jd, reg = s
        g_D = d.g_D
        gq = d.G.d_q - times_identity(g_D.d_q, self.n)
        gp = d.G.d_p - times_identity(g_D.d_p, self.n)
        jD = self.grid.spectral_jet(np.asarray(D, dtype=float))
        dD = -(jD.d_q * g_D.d_p - jD.d_p * g_D.d_q) \
            - np.real(tr(mm(jp.d_q, gp) - mm(jp.d_p, gq)))
        D = np.asarray(D, dtype=float)
        r = Regularizer.of(D, self.d_floor, self.eps).inv
        vq = average(jp.value, gp, D, r)
        vp = -average(jp.value, gq, D, r)
        Pv = jp.value
        flux = self.grid.divergence(PhaseVectorField(Pv * vq, Pv * vp))
        shear = jp.d_q * g_D.d_p - jp.d_p * g_D.d_q  # {P, dh/dD}
        G_split = d.G.value - times_identity(g_D.value, self.n)
        dP = -shear - flux + hcomm(G_split, Pv) / (1j * self.hbar)
        return dD, hermitize(dP)

    def velocity(self, P: np.ndarray) -> PhaseVectorField:
        return self.derivatives(P).velocity

    # -- derived densities ---------------------------------------------------

    def hybrid_density(self, P: np.ndarray) -> np.ndarray:
        """``P + (i hbar/2) div(D^-1 [P, J dP])``; same trace and integral as ``P``."""
        s = self.state_jet(P)
        Pv, r = s.P.value, s.reg.inv
        fq = r * hcomm(Pv, s.P.d_p)
        fp = -r * hcomm(Pv, s.P.d_q)
        return hermitize(Pv + 0.5j * self.hbar * self.grid.divergence(PhaseVectorField(fq, fp)))

    def conditional_state(self, P: np.ndarray) -> np.ndarray:
        """``P / D`` with the regularized reciprocal."""
        s = self.state_jet(P, check=False)
        return s.P.value * s.reg.inv

    def berry_curvature(self, P: np.ndarray) -> np.ndarray:
        """Curvature of the conditional state ``rho = P/D``, ``-i hbar Tr(rho [rho_q, rho_p])``."""
        s = self.state_jet(P, check=False)
        r, r1 = s.reg.inv, s.reg.dinv
        rho = s.P.value * r
        rq = s.P.d_q * r + s.P.value * (r1 * s.D.d_q)
        rp = s.P.d_p * r + s.P.value * (r1 * s.D.d_p)
        return np.real(-1j * self.hbar * tr(mm(rho, comm(rq, rp))))

    # -- invariants ----------------------------------------------------------

    def casimir(self, P: np.ndarray, phi: "Phi") -> float:
        """``int D Tr Phi(P/D)``."""
        s = self.state_jet(P, check=False)
        return float(self.grid.integrate(phi.matrix_density(s.P.value, s.D.value, s.reg.inv)))

    def bracket(self, f, g, P: np.ndarray) -> float:
        """Poisson bracket of two functionals at ``P``.

        ``-int <P, (i/hbar)[df, dg]> + int D omega(<X_df>, <X_dg>)``.
        Functionals provide ``value(model, P)`` and ``derivative(model, P) -> Jet``.
        """
        s = self.state_jet(P, check=False)
        Pv, D, r = s.P.value, s.D.value, s.reg.inv
        a, b = f.derivative(self, P), g.derivative(self, P)
        quantum = np.real(-1j / self.hbar * tr_mm(Pv, comm(a.value, b.value)))  # -<P, (i/hbar)[a, b]>
        aq, ap = average(Pv, a.d_q, D, r), average(Pv, a.d_p, D, r)
        bq, bp = average(Pv, b.d_q, D, r), average(Pv, b.d_p, D, r)
        classical = D * (aq * bp - ap * bq)
        return float(self.grid.integrate(quantum + classical))

    def marginal_residuals(self, P: np.ndarray, dPdt: np.ndarray | None = None) -> dict[str, float]:
        """Relative residuals of ``d_t D = Tr{H, Dhat}`` and ``i hbar d_t rho_q = int [H, Dhat]``."""
        if dPdt is None:
            dPdt = self.rhs(P)
        Dhat = self.hybrid_density(P)
        jd = self.grid.spectral_jet(Dhat)
        h = self.H.jet
        tr_bracket = np.real(tr(mm(h.d_q, jd.d_p) - mm(h.d_p, jd.d_q)))
        dD = np.real(tr(dPdt))
        scale_c = max(float(np.max(np.abs(dD))), 1e-300)
        lhs_q = 1j * self.hbar * self.grid.integrate(dPdt)
        rhs_q = self.grid.integrate(comm(h.value, Dhat))
        scale_q = max(float(np.max(np.abs(lhs_q))), float(np.max(np.abs(rhs_q))), 1e-300)
        return {
            "marginal_classical": float(np.max(np.abs(dD - tr_bracket))) / scale_c,
            "marginal_quantum": float(np.max(np.abs(lhs_q - rhs_q))) / scale_q,
        }


class NonUnitary(ValueError):
    pass


def equivariance_defect(model: ClosureModel, P: np.ndarray, U: np.ndarray, tol: float = 1e-12) -> float:
    """``max |Dhat(U P U^+) - U Dhat(P) U^+|`` for a constant unitary ``U``."""
    U = np.asarray(U, dtype=complex)
    if np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) > tol:
        raise NonUnitary("U^+ U differs from the identity")
    rotate = lambda A: np.einsum("ij,jk...,lk->il...", U, A, U.conj())  # noqa: E731
    return float(np.max(np.abs(model.hybrid_density(rotate(P)) - rotate(model.hybrid_density(P)))))


def quarter_turn(grid: PhaseSpaceGrid, f: np.ndarray) -> np.ndarray:
    """Push a field forward by ``(q, p) -> (p, -q)``.

    Exact on square grids with extents symmetric about the origin.
    """
    if grid.nq != grid.np or not (grid.q_min == grid.p_min == -grid.q_max == -grid.p_max):
        raise ValueError("quarter turns need a square grid centred at the origin")
    flipped = np.take(f, (-np.arange(grid.nq)) % grid.nq, axis=-2)
    return np.swapaxes(flipped, -1, -2)


def rotation_defect(model: ClosureModel, P: np.ndarray) -> float:
    """``max |Dhat(eta_* P) - eta_* Dhat(P)|`` for the quarter turn ``eta``."""
    grid = model.grid
    return float(np.max(np.abs(model.hybrid_density(quarter_turn(grid, P))
                               - quarter_turn(grid, model.hybrid_density(P)))))


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    np.subtract(a[1] * b[2], a[2] * b[1], out=out[0])
    np.subtract(a[2] * b[0], a[0] * b[2], out=out[1])
    np.subtract(a[0] * b[1], a[1] * b[0], out=out[2])
    return out


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


# -- Casimir functions ---------------------------------------------------------


@dataclass(frozen=True)
class Phi:
    """Casimir generator: ``x**k`` for ``0 <= k <= 4`` or the entropy ``-x log x``."""

    kind: str = "power"
    k: int = 2

    def __post_init__(self):
        if self.kind not in ("power", "entropy"):
            raise ValueError(f"unknown Casimir kind {self.kind!r}")
        if self.kind == "power" and not 0 <= self.k <= 4:
            raise ValueError("power Casimirs need 0 <= k <= 4")

    @property
    def label(self) -> str:
        return f"C_x{self.k}" if self.kind == "power" else "C_entropy"

    def scalar(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "power":
            return x ** self.k
        safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, -x * np.log(safe), 0.0)

    def matrix_density(self, P: np.ndarray, D: np.ndarray, inv: np.ndarray) -> np.ndarray:
        """``D Tr Phi(P/D)`` pointwise."""
        n = P.shape[0]
        if self.kind == "power":
            if self.k == 0:
                return n * D
            Pk = P
            for _ in range(self.k - 1):
                Pk = mm(Pk, P)
            return np.real(tr(Pk)) * inv ** (self.k - 1)
        mu = np.linalg.eigvalsh(np.moveaxis(P, (0, 1), (-2, -1)))
        mu = np.clip(mu, 0.0, None)
        x = mu * inv[..., None]
        return D * np.sum(self.scalar(x), axis=-1)


# -- test functionals ------------------------------------------------------------


class LinearFunctional:
    """``f(P) = int Re Tr(P A)`` for a Hermitian matrix field ``A`` with first derivatives."""

    def __init__(self, A: Jet):
        self.A = A

    def value(self, model: ClosureModel, P: np.ndarray) -> float:
        return float(model.grid.integrate(np.real(tr_mm(P, self.A.value))))

    def derivative(self, model: ClosureModel, P: np.ndarray) -> Jet:
        return self.A


class QuadraticFunctional:
    """``f(P) = a(P) b(P) / int Tr P`` for linear functionals ``a`` and ``b``."""

    def __init__(self, a: LinearFunctional, b: LinearFunctional):
        self.a, self.b = a, b

    def value(self, model: ClosureModel, P: np.ndarray) -> float:
        m = float(model.grid.integrate(np.real(tr(P))))
        return self.a.value(model, P) * self.b.value(model, P) / m

    def derivative(self, model: ClosureModel, P: np.ndarray) -> Jet:
        m = float(model.grid.integrate(np.real(tr(P))))
        va, vb = self.a.value(model, P), self.b.value(model, P)
        n = P.shape[0]
        ident = Jet(*(times_identity(x, n) for x in (np.ones(model.grid.shape),
                                                      np.zeros(model.grid.shape),
                                                      np.zeros(model.grid.shape))))
        return self.a.A.scaled(vb / m) + self.b.A.scaled(va / m) + ident.scaled(-va * vb / m**2)


class ClosureEnergy:
    """The closure energy viewed as a functional, for use in :meth:`ClosureModel.bracket`."""

    def value(self, model: ClosureModel, P: np.ndarray) -> float:
        return model.energy(P)

    def derivative(self, model: ClosureModel, P: np.ndarray) -> Jet:
        return model.derivatives(P).G


# -- reductions ------------------------------------------------------------------


class EhrenfestModel:
    """Closure without the correlation term: ``h = int Tr(P H)``."""

    def __init__(self, grid: PhaseSpaceGrid, H: HybridHamiltonian, hbar: float = 1.0,
                 d_floor: float = 1e-10, eps: float | None = None):
        self.grid, self.H, self.hbar, self.d_floor = grid, H, float(hbar), float(d_floor)
        self.eps = eps

    def velocity(self, P: np.ndarray) -> PhaseVectorField:
        h = self.H.jet
        D = np.real(tr(P))
        r = Regularizer.of(D, self.d_floor, self.eps).inv
        return PhaseVectorField(average(P, h.d_p, D, r), -average(P, h.d_q, D, r))

    def rhs(self, P: np.ndarray) -> np.ndarray:
        v = self.velocity(P)
        transport = self.grid.divergence(PhaseVectorField(P * v.q, P * v.p))
        return hermitize(-transport + hcomm(self.H.value, P) / (1j * self.hbar))

    def energy(self, P: np.ndarray) -> float:
        return float(self.grid.integrate(np.real(tr_mm(P, self.H.value))))


class MeanFieldModel:
    """Factorized ``P = D rho_q`` with a phase-space independent quantum state."""

    def __init__(self, grid: PhaseSpaceGrid, H: HybridHamiltonian, hbar: float = 1.0):
        self.grid, self.H, self.hbar = grid, H, float(hbar)

    def rhs(self, state: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        D, rho = state
        h = self.H.jet
        mean_q = np.real(np.einsum("ji,ij...->...", rho, h.d_q))
        mean_p = np.real(np.einsum("ji,ij...->...", rho, h.d_p))
        jd = self.grid.spectral_jet(D)
        dD = mean_q * jd.d_p - mean_p * jd.d_q  # {<H>, D}
        Hbar = self.grid.integrate(D * h.value)
        drho = (Hbar @ rho - rho @ Hbar) / (1j * self.hbar)
        return dD, 0.5 * (drho + drho.conj().T)

    def energy(self, state) -> float:
        D, rho = state
        mean = np.real(np.einsum("ji,ij...->...", rho, self.H.value))
        return float(self.grid.integrate(D * mean))
