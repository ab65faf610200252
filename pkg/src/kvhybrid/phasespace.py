"""Periodic two-dimensional phase-space grid with spectral calculus.

Fields live on a uniform ``nq x np`` grid.  Scalar fields are arrays of
shape ``(nq, np)``; vector-valued fields put their component axes first,
e.g. a matrix field has shape ``(n, n, nq, np)``.  All derivatives act on
the last two axes.

Smooth non-periodic functions (the polynomial Hamiltonians) never go
through an FFT.  They are carried as :class:`Jet` objects whose derivatives
are exact, so operators can mix spectrally differentiated states with
analytically differentiated generators.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
import scipy.fft as sfft


def fft_workers() -> int:
    """Thread count for FFTs, read from ``KVH_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("KVH_THREADS", "1")))
    except ValueError:
        return 1


class GridMismatch(ValueError):
    """Field shape does not match the grid it is used with."""


class CovectorField(NamedTuple):
    """One-form ``alpha_q dq + alpha_p dp`` sampled on the grid."""

    q: np.ndarray
    p: np.ndarray


class PhaseVectorField(NamedTuple):
    """Vector field ``V_q d/dq + V_p d/dp`` sampled on the grid."""

    q: np.ndarray
    p: np.ndarray


@dataclass
class Jet:
    """Values of a field together with its first and (optionally) second derivatives."""

    value: np.ndarray
    d_q: np.ndarray
    d_p: np.ndarray
    d_qq: np.ndarray | None = None
    d_qp: np.ndarray | None = None
    d_pp: np.ndarray | None = None

    def __add__(self, other: "Jet") -> "Jet":
        return Jet(*(_add_opt(a, b) for a, b in zip(self._parts(), other._parts())))

    def scaled(self, c) -> "Jet":
        return Jet(*(None if a is None else c * a for a in self._parts()))

    def _parts(self):
        return (self.value, self.d_q, self.d_p, self.d_qq, self.d_qp, self.d_pp)

    @property
    def has_second(self) -> bool:
        return self.d_qq is not None


def _add_opt(a, b):
    if a is None or b is None:
        return None
    return a + b


class Polynomial:
    """Real polynomial ``sum c_ab q^a p^b`` with exact derivatives.

    Parameters
    ----------
    coefficients : mapping or iterable
        Either ``{(a, b): c}`` or an iterable of ``(a, b, c)`` triples.
    """

    def __init__(self, coefficients=()):
        items = coefficients.items() if isinstance(coefficients, dict) else (
            ((int(a), int(b)), c) for a, b, c in coefficients
        )
        terms: dict[tuple[int, int], float] = {}
        for (a, b), c in items:
            if a < 0 or b < 0:
                raise ValueError(f"negative exponent in monomial q^{a} p^{b}")
            if c != 0:
                terms[(a, b)] = terms.get((a, b), 0.0) + float(c)
        self.terms = {k: v for k, v in terms.items() if v != 0.0}

    @property
    def degree(self) -> int:
        return max((a + b for a, b in self.terms), default=0)

    def d_q(self) -> "Polynomial":
        return Polynomial({(a - 1, b): a * c for (a, b), c in self.terms.items() if a > 0})

    def d_p(self) -> "Polynomial":
        return Polynomial({(a, b - 1): b * c for (a, b), c in self.terms.items() if b > 0})

    def __call__(self, q, p):
        out = np.zeros(np.broadcast(q, p).shape)
        for (a, b), c in self.terms.items():
            out = out + c * q**a * p**b
        return out

    def jet(self, grid: "PhaseSpaceGrid") -> Jet:
        Q, P = grid.Q, grid.P
        dq, dp = self.d_q(), self.d_p()
        return Jet(self(Q, P), dq(Q, P), dp(Q, P),
                   dq.d_q()(Q, P), dq.d_p()(Q, P), dp.d_p()(Q, P))

    def __repr__(self) -> str:
        return f"Polynomial({self.terms!r})"


FieldLike = Union[np.ndarray, Jet, Polynomial]


class PhaseSpaceGrid:
    """Uniform periodic grid on ``[q_min, q_max) x [p_min, p_max)``.

    Derivatives are pseudo-spectral.  With ``dealias=True`` every spectral
    derivative is projected onto the lower two thirds of the spectrum, so
    quadratic products formed afterwards alias only into discarded modes.
    """

    def __init__(self, nq: int, np_: int, q_min: float = -8.0, q_max: float = 8.0,
                 p_min: float = -8.0, p_max: float = 8.0, dealias: bool = True):
        if min(nq, np_) < 8 or nq % 2 or np_ % 2:
            raise ValueError(f"grid sizes must be even and at least 8, got {nq} x {np_}")
        if not (q_max > q_min and p_max > p_min):
            raise ValueError("grid extents must be increasing")
        self.nq, self.np = int(nq), int(np_)
        self.q_min, self.q_max = float(q_min), float(q_max)
        self.p_min, self.p_max = float(p_min), float(p_max)
        self.dealias = bool(dealias)
        self.Lq, self.Lp = self.q_max - self.q_min, self.p_max - self.p_min
        self.dq, self.dp = self.Lq / self.nq, self.Lp / self.np
        self.cell_area = self.dq * self.dp
        self.q = self.q_min + self.dq * np.arange(self.nq)
        self.p = self.p_min + self.dp * np.arange(self.np)
        self.Q, self.P = np.meshgrid(self.q, self.p, indexing="ij")
        self.shape = (self.nq, self.np)

        kq = 2 * np.pi * sfft.fftfreq(self.nq, self.dq)
        kp = 2 * np.pi * sfft.fftfreq(self.np, self.dp)
        mq = np.abs(sfft.fftfreq(self.nq) * self.nq)
        mp = np.abs(sfft.fftfreq(self.np) * self.np)
        # Nyquist modes have no odd derivative on an even grid.
        keep_q = mq < self.nq / 2
        keep_p = mp < self.np / 2
        if self.dealias:
            keep_q &= mq <= self.nq / 3
            keep_p &= mp <= self.np / 3
        self._kq = np.where(keep_q, kq, 0.0)[:, None]
        self._kp = np.where(keep_p, kp, 0.0)[None, :]
        self._filter = keep_q[:, None] & keep_p[None, :]
        self._kq_r = self._kq
        self._kp_r = self._kp[:, : self.np // 2 + 1]
        self._filter_r = self._filter[:, : self.np // 2 + 1]

    # -- bookkeeping -----------------------------------------------------

    def check(self, f: np.ndarray) -> np.ndarray:
        if f.shape[-2:] != self.shape:
            raise GridMismatch(f"field shape {f.shape} does not end in grid shape {self.shape}")
        return f

    def same_as(self, other: "PhaseSpaceGrid") -> bool:
        return (self.shape == other.shape and self.dealias == other.dealias and
                (self.q_min, self.q_max, self.p_min, self.p_max)
                == (other.q_min, other.q_max, other.p_min, other.p_max))

    @property
    def extents(self) -> tuple[float, float, float, float]:
        return (self.q_min, self.q_max, self.p_min, self.p_max)

    # -- spectral calculus -----------------------------------------------

    def _forward(self, f):
        if np.isrealobj(f):
            return sfft.rfft2(f, workers=fft_workers()), True
        return sfft.fft2(f, workers=fft_workers()), False

    def _backward(self, fh, real: bool):
        if real:
            return sfft.irfft2(fh, s=self.shape, workers=fft_workers())
        return sfft.ifft2(fh, workers=fft_workers())

    def _wavenumbers(self, real: bool):
        if real:
            return self._kq_r, self._kp_r
        return self._kq, self._kp

    def partial_q(self, f: FieldLike) -> np.ndarray:
        if not isinstance(f, np.ndarray):
            return self.jet(f).d_q
        fh, real = self._forward(self.check(f))
        kq, _ = self._wavenumbers(real)
        return self._backward(1j * kq * fh, real)

    def partial_p(self, f: FieldLike) -> np.ndarray:
        if not isinstance(f, np.ndarray):
            return self.jet(f).d_p
        fh, real = self._forward(self.check(f))
        _, kp = self._wavenumbers(real)
        return self._backward(1j * kp * fh, real)

    def spectral_jet(self, f: np.ndarray, second: bool = False) -> Jet:
        """Spectral first (and second) derivatives from a single forward FFT."""
        fh, real = self._forward(self.check(f))
        kq, kp = self._wavenumbers(real)
        back = self._backward
        jet = Jet(f, back(1j * kq * fh, real), back(1j * kp * fh, real))
        if second:
            jet.d_qq = back(-kq * kq * fh, real)
            jet.d_qp = back(-kq * kp * fh, real)
            jet.d_pp = back(-kp * kp * fh, real)
        return jet

    def jet(self, f: FieldLike, second: bool = False) -> Jet:
        """Return ``f`` with derivatives: exact for polynomials, spectral for arrays."""
        if isinstance(f, Jet):
            if second and not f.has_second:
                raise ValueError("second derivatives requested from a first-order jet")
            return f
        if isinstance(f, Polynomial):
            return f.jet(self)
        return self.spectral_jet(np.asarray(f), second=second)

    def filter(self, f: np.ndarray) -> np.ndarray:
        """Project onto the retained (dealiased) part of the spectrum."""
        fh, real = self._forward(self.check(f))
        return self._backward(fh * (self._filter_r if real else self._filter), real)

    def divergence(self, V: PhaseVectorField) -> np.ndarray:
        """``d_q V_q + d_p V_p`` computed with one inverse transform."""
        vq, vp = np.asarray(V[0]), np.asarray(V[1])
        real = np.isrealobj(vq) and np.isrealobj(vp)
        if not real:
            vq, vp = vq.astype(complex), vp.astype(complex)
        hq, _ = self._forward(self.check(vq))
        hp, _ = self._forward(self.check(vp))
        kq, kp = self._wavenumbers(real)
        return self._backward(1j * (kq * hq + kp * hp), real)

    # -- geometry ----------------------------------------------------------

    def poisson_bracket(self, f: FieldLike, g: FieldLike) -> np.ndarray:
        """Canonical bracket ``f_q g_p - f_p g_q`` (elementwise on trailing axes)."""
        jf, jg = self.jet(f), self.jet(g)
        return jf.d_q * jg.d_p - jf.d_p * jg.d_q

    def hamiltonian_vector_field(self, H: FieldLike) -> PhaseVectorField:
        """``X_H = (dH/dp, -dH/dq)``, so that ``dF/dt = {F, H}`` along its flow."""
        j = self.jet(H)
        return PhaseVectorField(j.d_p, -j.d_q)

    def canonical_one_form(self) -> CovectorField:
        """Symplectic potential ``p dq``; its exterior derivative is ``-dq^dp``."""
        return CovectorField(self.P.copy(), np.zeros(self.shape))

    def integrate(self, f: np.ndarray) -> np.ndarray | float:
        """Rectangle-rule quadrature over the last two axes."""
        return self.check(np.asarray(f)).sum(axis=(-2, -1)) * self.cell_area


def poisson_tensor_apply(alpha: CovectorField) -> PhaseVectorField:
    """Raise a one-form with the Poisson tensor: ``(a_q, a_p) -> (a_p, -a_q)``."""
    return PhaseVectorField(alpha.p, -alpha.q)


_FD8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def fd8_partial(f: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    """Eighth-order central finite difference on a periodic axis.

    Independent of the FFT path; used to cross-check spectral derivatives.
    """
    out = np.zeros_like(f)
    for offset, c in zip(range(-4, 5), _FD8):
        if c:
            out = out + c * np.roll(f, -offset, axis=axis)
    return out / spacing
