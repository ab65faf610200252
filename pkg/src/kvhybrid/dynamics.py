"""Explicit time stepping, diagnostics and convergence studies.

Every model is wrapped in a :class:`System` exposing ``rhs(state)``,
``diagnostics(state, t)`` and ``max_speed(state)``.  States are arrays or
tuples of arrays (named tuples keep their type through the steppers).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .closure import ClosureModel, DegenerateDensity, EhrenfestModel, MeanFieldModel, Phi, Regularizer
from .hybrid import HybridHamiltonian, hybrid_density_vanhove, hybrid_energy, hybrid_wave_rhs
from .kvh import kvh_rhs, liouville_rhs, momentum_map_J, prequantum_apply
from .matfield import tr
from .phasespace import FieldLike, PhaseSpaceGrid
from .spin2 import SpinModel

State = Any

METHODS = ("rk4", "midpoint")
CFL_SAFETY = 0.5
CFL_CHECK_EVERY = 100


class NonFiniteState(FloatingPointError):
    """A step produced NaN or Inf.  Carries the last finite state and the diagnostics so far."""

    def __init__(self, message: str, t: float, last_state: State, records: list):
        super().__init__(message)
        self.t, self.last_state, self.records = t, last_state, records


class CFLWarning(UserWarning):
    pass


class InsufficientLadder(ValueError):
    pass


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    t_final: float = 1.0
    method: str = "rk4"
    snapshot_every: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (self.dt > 0 and self.t_final > 0 and self.snapshot_every >= 1):
            raise ValueError("dt, t_final and snapshot_every must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_final / self.dt)))


@dataclass
class DiagnosticsRecord:
    t: float
    energy: float
    mass: float
    min_D: float
    purity: float = math.nan
    casimirs: dict[str, float] = field(default_factory=dict)
    berry_flux: float | None = None
    residuals: dict[str, float] = field(default_factory=dict)
    flags: dict[str, str] = field(default_factory=dict)  # reason for every NaN entry


# -- state arithmetic ------------------------------------------------------------


def _parts(state: State) -> tuple:
    return tuple(state) if isinstance(state, tuple) else (state,)


def _rebuild(like: State, parts) -> State:
    if isinstance(like, tuple):
        return type(like)(*parts) if hasattr(like, "_fields") else tuple(parts)
    return parts[0]


def combine(base: State, terms: Sequence[tuple[float, State]]) -> State:
    """``base + sum c_i k_i`` for states of identical structure."""
    out = []
    for i, b in enumerate(_parts(base)):
        acc = np.array(b, copy=True)
        for c, k in terms:
            acc = acc + c * _parts(k)[i]
        out.append(acc)
    return _rebuild(base, out)


def is_finite(state: State) -> bool:
    return all(bool(np.all(np.isfinite(x))) for x in _parts(state))


def step(system: "System", state: State, dt: float, method: str = "rk4") -> State:
    f = system.rhs
    if method == "rk4":
        k1 = f(state)
        k2 = f(combine(state, [(0.5 * dt, k1)]))
        k3 = f(combine(state, [(0.5 * dt, k2)]))
        k4 = f(combine(state, [(dt, k3)]))
        return combine(state, [(dt / 6, k1), (dt / 3, k2), (dt / 3, k3), (dt / 6, k4)])
    if method == "midpoint":
        k1 = f(state)
        return combine(state, [(dt, f(combine(state, [(0.5 * dt, k1)])))])
    raise ValueError(f"unknown method {method!r}")


@dataclass
class RunResult:
    state: State
    t: float
    records: list[DiagnosticsRecord]


def run(system: "System", state: State, config: IntegratorConfig,
        on_record: Callable[[DiagnosticsRecord], None] | None = None,
        diagnostics: bool = True) -> RunResult:
    """Integrate to ``config.t_final``, sampling diagnostics every ``snapshot_every`` steps.

    Raises :class:`NonFiniteState` on NaN/Inf and re-raises
    :class:`DegenerateDensity`; both carry ``last_state``, ``t`` and ``records``.
    """
    records: list[DiagnosticsRecord] = []

    def sample(s, t):
        if diagnostics:
            rec = system.diagnostics(s, t)
            records.append(rec)
            if on_record is not None:
                on_record(rec)

    n, dt = config.n_steps, config.dt
    t = 0.0
    sample(state, t)
    for i in range(1, n + 1):
        if (i - 1) % CFL_CHECK_EVERY == 0:
            _check_cfl(system, state, dt)
        try:
            new = step(system, state, dt, config.method)
        except DegenerateDensity as exc:
            exc.last_state, exc.t, exc.records = state, t, records
            raise
        if not is_finite(new):
            raise NonFiniteState(f"non-finite state after step {i} (t = {i * dt:.6g})", t, state, records)
        state, t = new, i * dt
        if i % config.snapshot_every == 0 or i == n:
            sample(state, t)
    return RunResult(state, t, records)


def _check_cfl(system: "System", state: State, dt: float) -> None:
    speed = system.max_speed(state)
    if speed is None or speed == 0.0:
        return
    bound = CFL_SAFETY * min(system.grid.dq, system.grid.dp) / speed
    if dt > bound:
        warnings.warn(f"dt = {dt:.3g} exceeds the CFL estimate {bound:.3g}", CFLWarning, stacklevel=3)


# -- convergence -------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    dts: list[float]
    errors: list[float]  # against the Richardson-extrapolated reference
    differences: list[float]  # between consecutive refinements
    order: float  # from the two finest differences; NaN when undefined
    t_final: float = math.nan  # common end time of every run

    def rows(self) -> list[dict[str, float]]:
        diffs = self.differences + [math.nan]
        return [{"dt": d, "error": e, "difference": df} for d, e, df in zip(self.dts, self.errors, diffs)]


def _norm(state: State) -> float:
    return math.sqrt(sum(float(np.sum(np.abs(x) ** 2)) for x in _parts(state)))


def convergence_study(system: "System", state: State, t_final: float, dts: Sequence[float],
                      method: str = "rk4", tol: float = 1e-12) -> ConvergenceTable:
    """Self-convergence over a ladder of at least three step sizes with ratio 2.

    Errors are relative to the norm of the finest solution.  The order is
    ``log2`` of the ratio of the two finest successive differences.  The
    horizon is rounded to a whole number of the coarsest step so that every
    run ends at the same time.
    """
    dts = sorted((float(d) for d in dts), reverse=True)
    if len(dts) < 3:
        raise InsufficientLadder("need at least three step sizes")
    for a, b in zip(dts, dts[1:]):
        if not math.isclose(a / b, 2.0, rel_tol=1e-9):
            raise InsufficientLadder(f"step sizes must halve; got {a} then {b}")
    t_final = max(1, round(t_final / dts[0])) * dts[0]
    finals = []
    for dt in dts:
        res = run(system, state, IntegratorConfig(dt=dt, t_final=t_final, method=method,
                                                   snapshot_every=10**9), diagnostics=False)
        finals.append(res.state)
    scale = max(_norm(finals[-1]), 1e-300)
    diffs = [_norm(combine(a, [(-1.0, b)])) / scale for a, b in zip(finals, finals[1:])]
    if diffs[-1] < tol or diffs[-2] < tol:
        order = math.nan
        ref = finals[-1]
    else:
        order = math.log2(diffs[-2] / diffs[-1])
        factor = 2.0 ** order - 1.0
        ref = combine(finals[-1], [(1.0 / factor, finals[-1]), (-1.0 / factor, finals[-2])]) \
            if factor > 0 else finals[-1]
    errors = [_norm(combine(u, [(-1.0, ref)])) / scale for u in finals]
    return ConvergenceTable(dts, errors, diffs, order, t_final)


# -- systems -------------------------------------------------------------------------


class System:
    grid: PhaseSpaceGrid
    name = "system"

    def rhs(self, state: State) -> State:
        raise NotImplementedError

    def diagnostics(self, state: State, t: float) -> DiagnosticsRecord:
        raise NotImplementedError

    def max_speed(self, state: State) -> float | None:
        return None


def _max_norm(vq: np.ndarray, vp: np.ndarray) -> float:
    return float(np.max(np.hypot(vq, vp)))


class LiouvilleSystem(System):
    """``d_t rho = {H, rho}`` for a scalar density."""

    name = "liouville"

    def __init__(self, grid: PhaseSpaceGrid, H: FieldLike):
        self.grid, self.H = grid, grid.jet(H)

    def rhs(self, rho):
        return liouville_rhs(self.grid, self.H, rho)

    def diagnostics(self, rho, t):
        g = self.grid
        return DiagnosticsRecord(t, float(g.integrate(rho * self.H.value)), float(g.integrate(rho)),
                                 float(np.min(rho)))

    def max_speed(self, rho):
        return _max_norm(self.H.d_p, self.H.d_q)


class KvHSystem(System):
    """Koopman-van Hove wavefunction; ``min_D`` refers to the projected density ``J(psi)``."""

    name = "kvh"

    def __init__(self, grid: PhaseSpaceGrid, H: FieldLike, hbar: float = 1.0):
        self.grid, self.H, self.hbar = grid, grid.jet(H), float(hbar)

    def rhs(self, psi):
        return kvh_rhs(self.grid, self.H, psi, self.hbar)

    def diagnostics(self, psi, t):
        g = self.grid
        energy = float(np.real(g.integrate(np.conj(psi) * prequantum_apply(g, self.H, psi, self.hbar))))
        rho = momentum_map_J(g, psi, self.hbar)
        return DiagnosticsRecord(t, energy, float(g.integrate(np.abs(psi) ** 2)), float(np.min(rho)))

    def max_speed(self, psi):
        return _max_norm(self.H.d_p, self.H.d_q)


class WaveSystem(System):
    """Hybrid wave equation for ``Upsilon`` of shape ``(n, nq, np)``."""

    name = "wave"

    def __init__(self, grid: PhaseSpaceGrid, H: HybridHamiltonian, hbar: float = 1.0):
        self.grid, self.H, self.hbar = grid, H, float(hbar)

    def rhs(self, ups):
        return hybrid_wave_rhs(self.grid, self.H, ups, self.hbar)

    def diagnostics(self, ups, t):
        g = self.grid
        dens = hybrid_density_vanhove(g, ups, self.hbar)
        rho_q = g.integrate(dens)
        return DiagnosticsRecord(
            t, hybrid_energy(g, self.H, ups, self.hbar), float(g.integrate(np.sum(np.abs(ups) ** 2, axis=0))),
            float(np.min(np.real(tr(dens)))), float(np.real(np.trace(rho_q @ rho_q))))

    def max_speed(self, ups):
        j = self.H.jet
        return _max_norm(np.abs(j.d_p).max(axis=(0, 1)), np.abs(j.d_q).max(axis=(0, 1)))


def _rank_defect(P: np.ndarray, D: np.ndarray, inv: np.ndarray, rel: float = 1e-6) -> float:
    """``max |rho^2 - rho|`` for ``rho = P/D`` where ``D`` exceeds ``rel * max D``."""
    mask = D > rel * float(np.max(D))
    rho = P[:, :, mask] * inv[mask]
    return float(np.max(np.abs(np.einsum("ij...,jk...->ik...", rho, rho) - rho))) if mask.any() else math.nan


class ClosureSystem(System):
    """Closure model on a matrix field ``P``.

    Parameters
    ----------
    casimirs : sequence of Phi
        Casimir generators sampled with every record.
    residuals : bool
        Also evaluate the marginal laws (one extra right-hand side per record).
    berry : bool
        Also integrate the Berry curvature of the conditional state.
    """

    name = "closure"

    def __init__(self, model: ClosureModel, casimirs: Sequence[Phi] = (Phi("power", 2),),
                 residuals: bool = True, berry: bool = False):
        self.model, self.grid = model, model.grid
        self.casimirs, self.want_residuals, self.berry = tuple(casimirs), residuals, berry

    def rhs(self, P):
        return self.model.rhs(P)

    def diagnostics(self, P, t):
        m, g = self.model, self.grid
        D = np.real(tr(P))
        rho_q = g.integrate(P)
        rec = DiagnosticsRecord(t, math.nan, float(g.integrate(D)), float(np.min(D)),
                                float(np.real(np.trace(rho_q @ rho_q))))
        try:
            rec.energy = m.energy(P)
            for phi in self.casimirs:
                rec.casimirs[phi.label] = m.casimir(P, phi)
            inv = Regularizer.of(D, m.d_floor, m.eps).inv
            rec.residuals["rank_defect"] = _rank_defect(P, D, inv)
            if self.want_residuals:
                rec.residuals.update(m.marginal_residuals(P))
            if self.berry:
                rec.berry_flux = float(g.integrate(m.berry_curvature(P)))
        except DegenerateDensity as exc:
            rec.flags["energy"] = f"degenerate density: {exc}"
        return rec

    def max_speed(self, P):
        try:
            v = self.model.velocity(P)
        except DegenerateDensity:
            return None
        return _max_norm(v.q, v.p)


class EhrenfestSystem(ClosureSystem):
    name = "ehrenfest"

    def __init__(self, model: EhrenfestModel, casimirs: Sequence[Phi] = (Phi("power", 2),)):
        self.model, self.grid = model, model.grid
        self.casimirs, self.want_residuals, self.berry = tuple(casimirs), False, False

    def diagnostics(self, P, t):
        m, g = self.model, self.grid
        D = np.real(tr(P))
        rho_q = g.integrate(P)
        rec = DiagnosticsRecord(t, m.energy(P), float(g.integrate(D)), float(np.min(D)),
                                float(np.real(np.trace(rho_q @ rho_q))))
        inv = Regularizer.of(D, m.d_floor, m.eps).inv
        for phi in self.casimirs:
            rec.casimirs[phi.label] = float(g.integrate(phi.matrix_density(P, D, inv)))
        rec.residuals["rank_defect"] = _rank_defect(P, D, inv)
        return rec


class MeanFieldSystem(System):
    """State ``(D, rho_q)`` with a single phase-space independent density matrix."""

    name = "meanfield"

    def __init__(self, model: MeanFieldModel):
        self.model, self.grid = model, model.grid

    def rhs(self, state):
        return self.model.rhs(state)

    def diagnostics(self, state, t):
        D, rho = state
        return DiagnosticsRecord(t, self.model.energy(state), float(self.grid.integrate(D)),
                                 float(np.min(D)), float(np.real(np.trace(rho @ rho))))

    def max_speed(self, state):
        h = self.model.H.jet
        rho = state[1]
        vq = np.real(np.einsum("ji,ij...->...", rho, h.d_p))
        vp = np.real(np.einsum("ji,ij...->...", rho, h.d_q))
        return _max_norm(vq, vp)


class SpinSystem(System):
    """Closure dynamics in Bloch variables ``(D, s)``."""

    name = "spin"

    def __init__(self, model: SpinModel, casimirs: Sequence[Phi] = (Phi("power", 2),)):
        self.model, self.grid = model, model.grid
        self.casimirs = tuple(casimirs)

    def rhs(self, state):
        return self.model.rhs(state)

    def diagnostics(self, state, t):
        m, g = self.model, self.grid
        D, s = np.asarray(state.D), np.asarray(state.s)
        # rho_q = int P = int D / 2 + (int s).sigma / hbar
        mass = float(g.integrate(D))
        svec = g.integrate(s) / m.hbar
        purity = 0.5 * mass**2 + 2.0 * float(np.dot(svec, svec))
        rec = DiagnosticsRecord(t, math.nan, mass, float(np.min(D)), purity)
        try:
            rec.energy = m.energy(state)
            for phi in self.casimirs:
                rec.casimirs[phi.label] = m.casimir(state, phi, form="matrix")
                rec.casimirs[phi.label + "_direct"] = m.casimir(state, phi, form="direct")
            mask = D > 1e-6 * float(np.max(D))
            defect = np.abs(m.bloch_length(state)[mask] - 0.5 * m.hbar)
            rec.residuals["bloch_defect"] = float(np.max(defect)) if mask.any() else math.nan
        except DegenerateDensity as exc:
            rec.flags["energy"] = f"degenerate density: {exc}"
        return rec

    def max_speed(self, state):
        try:
            v = self.model.derivatives(state).velocity
        except DegenerateDensity:
            return None
        return _max_norm(v.q, v.p)


def quantum_purity(P: np.ndarray, grid: PhaseSpaceGrid) -> float:
    """``Tr(rho_q^2)`` with ``rho_q = int P``."""
    rho_q = grid.integrate(P)
    return float(np.real(np.trace(rho_q @ rho_q)))


__all__ = [
    "CFLWarning", "ClosureSystem", "ConvergenceTable", "DiagnosticsRecord", "EhrenfestSystem",
    "InsufficientLadder", "IntegratorConfig", "KvHSystem", "LiouvilleSystem", "MeanFieldSystem",
    "NonFiniteState", "RunResult", "SpinSystem", "System", "WaveSystem", "combine",
    "convergence_study", "is_finite", "quantum_purity", "run", "step",
]
