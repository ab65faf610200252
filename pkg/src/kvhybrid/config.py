"""Run configuration: a small sectioned ``key = value`` format, validation and presets.

Values are Python literals (numbers, strings, tuples, lists, booleans);
anything that is not a literal is taken as a bare string.  All problems
found in a file are reported together, each with its line number.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .closure import ClosureModel, EhrenfestModel, MeanFieldModel, Phi
from .dynamics import (ClosureSystem, EhrenfestSystem, IntegratorConfig, KvHSystem, LiouvilleSystem,
                       MeanFieldSystem, SpinSystem, System, WaveSystem)
from .hybrid import HybridHamiltonian
from .matfield import pauli_expand
from .phasespace import PhaseSpaceGrid, Polynomial
from .spin2 import SpinHamiltonian, SpinModel, SpinState

MODELS = ("kvh", "wave", "closure", "ehrenfest", "meanfield", "spin", "liouville")
PRESETS = ("harmonic", "spin_boson", "custom")
MAX_MONOMIAL_DEGREE = 4
NOISE_MODES = 1


class ConfigError(ValueError):
    def __init__(self, line: int | None, message: str):
        self.line, self.message = line, message
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class UnknownKey(ConfigError):
    pass


class RangeError(ConfigError):
    pass


class MissingSection(ConfigError):
    pass


class ConfigErrors(ValueError):
    """Every error found while parsing one configuration."""

    def __init__(self, errors: list[ConfigError]):
        self.errors = errors
        super().__init__("\n".join(str(e) for e in errors))


@dataclass
class GridSpec:
    nq: int = 128
    np: int = 128
    q_min: float = -8.0
    q_max: float = 8.0
    p_min: float = -8.0
    p_max: float = 8.0
    dealias: bool = True

    def build(self) -> PhaseSpaceGrid:
        return PhaseSpaceGrid(self.nq, self.np, self.q_min, self.q_max, self.p_min, self.p_max, self.dealias)


@dataclass
class HamiltonianSpec:
    """``H0 Id + (hbar/2) B . sigma`` with ``B`` given by ``coupling``; monomials are ``(a, b, c)`` triples for ``c q^a p^b``."""

    preset: str = "spin_boson"
    omega: float = 1.0
    lam: float = 0.5
    omega_s: float = 1.0
    h0: list = field(default_factory=list)
    coupling: list = field(default_factory=lambda: [[], [], []])

    def polynomials(self) -> tuple[Polynomial, tuple[Polynomial, Polynomial, Polynomial]]:
        if self.preset == "custom":
            return Polynomial(self.h0), tuple(Polynomial(c) for c in self.coupling)
        H0 = Polynomial({(2, 0): 0.5 * self.omega, (0, 2): 0.5 * self.omega})
        coupling = self.lam if self.preset == "spin_boson" else 0.0
        return H0, (Polynomial({(1, 0): coupling}), Polynomial(), Polynomial({(0, 0): self.omega_s}))


@dataclass
class InitialSpec:
    center: tuple[float, float] = (1.0, 0.0)
    widths: tuple[float, float] = (0.75, 0.75)
    bloch: tuple[float, float, float] = (1.0, 0.0, 0.0)
    # optional polynomial polar and azimuthal angles of the Bloch direction, overriding ``bloch``
    theta: list | None = None
    phi: list | None = None
    phase: tuple[float, float] = (0.0, 0.0)  # linear phase S0 = a q + b p for wavefunction models
    noise: float = 0.0  # amplitude of a seeded, band-limited perturbation of the Bloch direction


@dataclass
class OutputSpec:
    directory: str = "out"
    snapshots: str = "final"
    casimirs: list = field(default_factory=lambda: ["x2"])
    residuals: bool = True
    berry: bool = False


@dataclass
class RunConfig:
    model: str = "closure"
    hbar: float = 1.0
    d_floor: float = 1e-10
    eps: float | None = None
    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    hamiltonian: HamiltonianSpec = field(default_factory=HamiltonianSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    output: OutputSpec = field(default_factory=OutputSpec)


# -- schema ------------------------------------------------------------------------

def _positive(x):
    return x > 0


def _even_ge8(x):
    return isinstance(x, int) and x >= 8 and x % 2 == 0


_SCHEMA: dict[str, dict[str, tuple[type | tuple, Any, str]]] = {
    "grid": {
        "n": (int, _even_ge8, "an even integer >= 8"),
        "nq": (int, _even_ge8, "an even integer >= 8"),
        "np": (int, _even_ge8, "an even integer >= 8"),
        "q_min": ((int, float), None, ""), "q_max": ((int, float), None, ""),
        "p_min": ((int, float), None, ""), "p_max": ((int, float), None, ""),
        "extent": ((int, float), _positive, "positive"),
        "dealias": (bool, None, ""),
    },
    "model": {
        "name": (str, lambda v: v in MODELS, f"one of {', '.join(MODELS)}"),
        "hbar": ((int, float), _positive, "positive"),
        "d_floor": ((int, float), _positive, "positive"),
        "eps": ((int, float), _positive, "positive"),
        "seed": (int, lambda v: v >= 0, "non-negative"),
    },
    "hamiltonian": {
        "preset": (str, lambda v: v in PRESETS, f"one of {', '.join(PRESETS)}"),
        "omega": ((int, float), _positive, "positive"),
        "lambda": ((int, float), None, ""),
        "omega_s": ((int, float), None, ""),
        "h0": ((list, tuple), None, ""),
        "field": ((list, tuple), lambda v: len(v) == 3, "three coefficient lists"),
    },
    "initial": {
        "center": ((list, tuple), lambda v: len(v) == 2, "a pair"),
        "width": ((int, float), _positive, "positive"),
        "widths": ((list, tuple), lambda v: len(v) == 2 and min(v) > 0, "a pair of positive numbers"),
        "bloch": ((list, tuple), lambda v: len(v) == 3 and any(v), "a nonzero 3-vector"),
        "theta": ((list, tuple), None, ""),
        "phi": ((list, tuple), None, ""),
        "phase": ((list, tuple), lambda v: len(v) == 2, "a pair"),
        "noise": ((int, float), lambda v: v >= 0, "non-negative"),
    },
    "integrator": {
        "method": (str, lambda v: v in ("rk4", "midpoint"), "rk4 or midpoint"),
        "dt": ((int, float), _positive, "positive"),
        "t_final": ((int, float), _positive, "positive"),
        "snapshot_every": (int, lambda v: v >= 1, "at least 1"),
    },
    "output": {
        "directory": (str, None, ""),
        "snapshots": (str, lambda v: v in ("none", "final", "all"), "none, final or all"),
        "casimirs": ((list, tuple), None, ""),
        "residuals": (bool, None, ""),
        "berry": (bool, None, ""),
    },
}
REQUIRED_SECTIONS = ("model", "hamiltonian")


def _literal(text: str) -> Any:
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _check_monomials(coeffs, line: int, errors: list[ConfigError]) -> None:
    for item in coeffs:
        if not (isinstance(item, (list, tuple)) and len(item) == 3):
            errors.append(RangeError(line, f"monomial {item!r} is not an (a, b, coefficient) triple"))
        elif not (isinstance(item[0], int) and isinstance(item[1], int) and item[0] >= 0 and item[1] >= 0):
            errors.append(RangeError(line, f"monomial exponents {item[:2]!r} must be non-negative integers"))
        elif item[0] + item[1] > MAX_MONOMIAL_DEGREE:
            errors.append(RangeError(line, f"monomial q^{item[0]} p^{item[1]} exceeds degree {MAX_MONOMIAL_DEGREE}"))


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises :class:`ConfigErrors` listing every problem."""
    errors: list[ConfigError] = []
    values: dict[str, dict[str, tuple[Any, int]]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                errors.append(UnknownKey(lineno, f"unknown section [{section}]; valid: {', '.join(_SCHEMA)}"))
                section = None
                continue
            values.setdefault(section, {})
            continue
        if "=" not in line:
            errors.append(ConfigError(lineno, f"expected 'key = value', got {line!r}"))
            continue
        if section is None:
            errors.append(ConfigError(lineno, "key outside of a known section"))
            continue
        key, _, val = (s.strip() for s in line.partition("="))
        schema = _SCHEMA[section]
        if key not in schema:
            errors.append(UnknownKey(lineno, f"unknown key {key!r} in [{section}]; valid: {', '.join(schema)}"))
            continue
        value = _literal(val)
        kind, pred, what = schema[key]
        # bool is an int subclass; only boolean keys accept it
        ok_type = isinstance(value, kind) and (kind is bool or not isinstance(value, bool))
        if not ok_type:
            if key == "name" and section == "model":
                errors.append(UnknownKey(lineno, f"unknown model {value!r}; valid models: {', '.join(MODELS)}"))
            else:
                errors.append(RangeError(lineno, f"[{section}] {key} = {val!r} has the wrong type"))
            continue
        if pred is not None and not pred(value):
            if key == "name" and section == "model":
                errors.append(UnknownKey(lineno, f"unknown model {value!r}; valid models: {', '.join(MODELS)}"))
            elif key == "preset":
                errors.append(UnknownKey(lineno, f"unknown preset {value!r}; valid presets: {', '.join(PRESETS)}"))
            else:
                errors.append(RangeError(lineno, f"[{section}] {key} = {val} must be {what}"))
            continue
        if key in ("h0", "theta", "phi"):
            _check_monomials(value, lineno, errors)
        if key == "field":
            for comp in value:
                _check_monomials(comp, lineno, errors)
        if key == "casimirs":
            for name in value:
                if name not in ("x0", "x1", "x2", "x3", "x4", "entropy"):
                    errors.append(UnknownKey(lineno, f"unknown Casimir {name!r}; valid: x0..x4, entropy"))
        values[section][key] = (value, lineno)
    for name in REQUIRED_SECTIONS:
        if name not in values:
            errors.append(MissingSection(None, f"missing required section [{name}]"))

    cfg = RunConfig()

    def get(sec, key, default):
        return values.get(sec, {}).get(key, (default, None))[0]

    def line_of(sec, key):
        return values.get(sec, {}).get(key, (None, None))[1]

    n = get("grid", "n", None)
    ext = get("grid", "extent", None)
    g = GridSpec()
    g.nq = get("grid", "nq", n if n is not None else g.nq)
    g.np = get("grid", "np", n if n is not None else g.np)
    if ext is not None:
        g.q_min, g.q_max, g.p_min, g.p_max = -ext, ext, -ext, ext
    g.q_min = float(get("grid", "q_min", g.q_min))
    g.q_max = float(get("grid", "q_max", g.q_max))
    g.p_min = float(get("grid", "p_min", g.p_min))
    g.p_max = float(get("grid", "p_max", g.p_max))
    g.dealias = get("grid", "dealias", True)
    if g.q_max <= g.q_min:
        errors.append(RangeError(line_of("grid", "q_max") or line_of("grid", "q_min"), "q_max must exceed q_min"))
    if g.p_max <= g.p_min:
        errors.append(RangeError(line_of("grid", "p_max") or line_of("grid", "p_min"), "p_max must exceed p_min"))
    cfg.grid = g

    cfg.model = get("model", "name", cfg.model)
    cfg.hbar = float(get("model", "hbar", cfg.hbar))
    cfg.d_floor = float(get("model", "d_floor", cfg.d_floor))
    eps = get("model", "eps", None)
    cfg.eps = None if eps is None else float(eps)
    cfg.seed = get("model", "seed", cfg.seed)

    h = HamiltonianSpec()
    h.preset = get("hamiltonian", "preset", h.preset)
    h.omega = float(get("hamiltonian", "omega", h.omega))
    h.lam = float(get("hamiltonian", "lambda", h.lam))
    h.omega_s = float(get("hamiltonian", "omega_s", h.omega_s))
    h.h0 = [tuple(x) for x in get("hamiltonian", "h0", [])]
    h.coupling = [[tuple(x) for x in comp] for comp in get("hamiltonian", "field", [[], [], []])]
    if h.preset == "custom" and not h.h0 and not any(h.coupling):
        errors.append(RangeError(line_of("hamiltonian", "preset"), "custom preset needs h0 or field coefficients"))
    cfg.hamiltonian = h

    i = InitialSpec()
    i.center = tuple(float(x) for x in get("initial", "center", i.center))
    width = get("initial", "width", None)
    i.widths = (float(width), float(width)) if width is not None else tuple(
        float(x) for x in get("initial", "widths", i.widths))
    i.bloch = tuple(float(x) for x in get("initial", "bloch", i.bloch))
    theta, phi = get("initial", "theta", None), get("initial", "phi", None)
    i.theta = None if theta is None else [tuple(x) for x in theta]
    i.phi = None if phi is None else [tuple(x) for x in phi]
    i.phase = tuple(float(x) for x in get("initial", "phase", i.phase))
    i.noise = float(get("initial", "noise", i.noise))
    cfg.initial = i

    method = get("integrator", "method", "rk4")
    dt = float(get("integrator", "dt", 1e-3))
    t_final = float(get("integrator", "t_final", 1.0))
    every = get("integrator", "snapshot_every", 100)
    if dt > t_final:
        errors.append(RangeError(line_of("integrator", "dt"), f"dt = {dt} exceeds t_final = {t_final}"))
    else:
        cfg.integrator = IntegratorConfig(dt=dt, t_final=t_final, method=method, snapshot_every=every)

    o = OutputSpec()
    o.directory = get("output", "directory", o.directory)
    o.snapshots = get("output", "snapshots", o.snapshots)
    o.casimirs = list(get("output", "casimirs", o.casimirs))
    o.residuals = get("output", "residuals", o.residuals)
    o.berry = get("output", "berry", o.berry)
    cfg.output = o

    if errors:
        raise ConfigErrors(errors)
    return cfg


# -- construction --------------------------------------------------------------------


def casimir_generators(names) -> list[Phi]:
    return [Phi("entropy") if n == "entropy" else Phi("power", int(n[1:])) for n in names]


def hybrid_hamiltonian(cfg: RunConfig, grid: PhaseSpaceGrid) -> HybridHamiltonian:
    H0, field_polys = cfg.hamiltonian.polynomials()
    return HybridHamiltonian.from_pauli(grid, H0, field_polys, cfg.hbar)


def gaussian_density(grid: PhaseSpaceGrid, center, widths) -> np.ndarray:
    D = np.exp(-0.5 * (((grid.Q - center[0]) / widths[0]) ** 2 + ((grid.P - center[1]) / widths[1]) ** 2))
    return D / grid.integrate(D)


def bloch_direction(cfg: RunConfig, grid: PhaseSpaceGrid) -> np.ndarray:
    """Unit Bloch vector field of shape ``(3, nq, np)``."""
    init = cfg.initial
    if init.theta is not None or init.phi is not None:
        th = Polynomial(init.theta or [])(grid.Q, grid.P)
        ph = Polynomial(init.phi or [])(grid.Q, grid.P)
        n = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    else:
        n = np.broadcast_to(np.asarray(init.bloch, dtype=float)[:, None, None], (3,) + grid.shape).copy()
    if init.noise > 0:
        n = n + init.noise * smooth_noise(np.random.default_rng(cfg.seed), (3,) + grid.shape)
    return n / np.sqrt(np.sum(n * n, axis=0))


def smooth_noise(rng: np.random.Generator, shape: tuple[int, ...], modes: int = NOISE_MODES) -> np.ndarray:
    """Unit-variance random field keeping only Fourier modes ``|m| <= modes`` along the last two axes.

    White grid noise is unresolved and breaks the closure within a few steps.
    """
    spectrum = np.fft.fft2(rng.standard_normal(shape))
    keep_q = np.abs(np.fft.fftfreq(shape[-2], 1.0 / shape[-2])) <= modes
    keep_p = np.abs(np.fft.fftfreq(shape[-1], 1.0 / shape[-1])) <= modes
    field = np.real(np.fft.ifft2(spectrum * (keep_q[:, None] & keep_p[None, :])))
    return field / np.sqrt(np.mean(field**2, axis=(-2, -1), keepdims=True))


def spinor_from_bloch(n: np.ndarray) -> np.ndarray:
    """Unit two-spinor with Bloch vector ``n`` (shape ``(2, ...)``)."""
    theta = np.arccos(np.clip(n[2], -1.0, 1.0))
    phi = np.arctan2(n[1], n[0])
    return np.stack([np.cos(theta / 2) + 0j, np.exp(1j * phi) * np.sin(theta / 2)])


def initial_state(cfg: RunConfig, grid: PhaseSpaceGrid):
    init = cfg.initial
    D = gaussian_density(grid, init.center, init.widths)
    n = bloch_direction(cfg, grid)
    phase = np.exp(1j * (init.phase[0] * grid.Q + init.phase[1] * grid.P) / cfg.hbar)
    model = cfg.model
    if model == "liouville":
        return D
    if model == "kvh":
        return np.sqrt(D) * phase
    if model == "wave":
        return np.sqrt(D) * phase * spinor_from_bloch(n)
    if model in ("closure", "ehrenfest"):
        return pauli_expand(0.5 * D, 0.5 * D * n)
    if model == "meanfield":
        n0 = n[:, 0, 0]
        return D, pauli_expand(np.array(0.5), 0.5 * n0)
    if model == "spin":
        return SpinState(D, 0.5 * cfg.hbar * D * n)
    raise ValueError(f"unknown model {model!r}")


def build_system(cfg: RunConfig, grid: PhaseSpaceGrid | None = None) -> System:
    grid = grid or cfg.grid.build()
    cas = casimir_generators(cfg.output.casimirs)
    if cfg.model in ("liouville", "kvh"):
        H0, _ = cfg.hamiltonian.polynomials()
        return LiouvilleSystem(grid, H0) if cfg.model == "liouville" else KvHSystem(grid, H0, cfg.hbar)
    H = hybrid_hamiltonian(cfg, grid)
    if cfg.model == "wave":
        return WaveSystem(grid, H, cfg.hbar)
    if cfg.model == "closure":
        m = ClosureModel(grid, H, cfg.hbar, d_floor=cfg.d_floor, eps=cfg.eps)
        return ClosureSystem(m, cas, residuals=cfg.output.residuals, berry=cfg.output.berry)
    if cfg.model == "ehrenfest":
        return EhrenfestSystem(EhrenfestModel(grid, H, cfg.hbar, cfg.d_floor, cfg.eps), cas)
    if cfg.model == "meanfield":
        return MeanFieldSystem(MeanFieldModel(grid, H, cfg.hbar))
    if cfg.model == "spin":
        sm = SpinModel(grid, SpinHamiltonian.from_hybrid(H, cfg.hbar), cfg.hbar, cfg.d_floor, eps=cfg.eps)
        return SpinSystem(sm, cas)
    raise ValueError(f"unknown model {cfg.model!r}")
