"""Command line entry point: ``kvh run|check|reduce|convergence <config>``.

Exit codes: 0 success, 1 failed check or tolerance, 2 configuration or I/O
error, 3 run aborted (non-finite state or degenerate density).
"""

from __future__ import annotations

import argparse
import copy
import math
import os
import sys
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.stats import unitary_group

from . import config as cfgmod
from .closure import (ClosureEnergy, ClosureModel, DegenerateDensity, EhrenfestModel, LinearFunctional,
                      MeanFieldModel, equivariance_defect, rotation_defect)
from .dynamics import (ClosureSystem, EhrenfestSystem, LiouvilleSystem, MeanFieldSystem, NonFiniteState,
                       RunResult, convergence_study, run, step)
from .hybrid import HybridHamiltonian
from .io import DiagnosticsWriter, write_snapshot, write_table
from .kvh import prequantum_apply
from .matfield import PAULI, hermitian_defect, pauli_expand, tr_mm
from .phasespace import PhaseSpaceGrid, Polynomial, fd8_partial
from .spin2 import SpinHamiltonian, SpinModel, closure_rhs_in_spin_variables, spin_from_density

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _load(path: str) -> cfgmod.RunConfig:
    return cfgmod.parse_config(Path(path).read_text())


def _out_dir(cfg: cfgmod.RunConfig, output_dir: str | None) -> Path:
    out = Path(output_dir or ".") / cfg.output.directory
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- run -------------------------------------------------------------------------------


def run_command(cfg: cfgmod.RunConfig, output_dir: str | None = None) -> int:
    grid = cfg.grid.build()
    system = cfgmod.build_system(cfg, grid)
    state = cfgmod.initial_state(cfg, grid)
    out = _out_dir(cfg, output_dir)
    mode = cfg.output.snapshots
    counter = {"n": 0}

    with open(out / "diagnostics.csv", "w", newline="") as fh:
        writer = DiagnosticsWriter(fh)
        if mode != "none":
            write_snapshot(out / "initial.kvhb", state, grid, cfg.hbar, 0.0)

        def on_record(rec):
            writer.write(rec)
            counter["n"] += 1

        try:
            if mode == "all":
                result = _run_with_snapshots(system, state, cfg, out, on_record)
            else:
                result = run(system, state, cfg.integrator, on_record=on_record)
        except (NonFiniteState, DegenerateDensity) as exc:
            last = getattr(exc, "last_state", None)
            if last is not None and mode != "none":
                write_snapshot(out / "last_good.kvhb", last, grid, cfg.hbar, getattr(exc, "t", math.nan))
            print(f"run aborted: {exc}", file=sys.stderr)
            return EXIT_ABORT
    if mode != "none":
        write_snapshot(out / "final.kvhb", result.state, grid, cfg.hbar, result.t)
    print(f"wrote {counter['n']} diagnostics records to {out / 'diagnostics.csv'}")
    return EXIT_OK


def _run_with_snapshots(system, state, cfg, out: Path, on_record: Callable):
    """Run in chunks of ``snapshot_every`` steps, writing one snapshot per chunk."""
    integ = cfg.integrator
    grid = system.grid
    dt, n = integ.dt, integ.n_steps
    on_record(system.diagnostics(state, 0.0))
    write_snapshot(out / "snapshot_000000.kvhb", state, grid, cfg.hbar, 0.0)
    i = 0
    records = []
    while i < n:
        chunk = min(integ.snapshot_every, n - i)
        sub = copy.copy(integ)
        sub.t_final = chunk * dt
        sub.snapshot_every = chunk
        res = run(system, state, sub, diagnostics=False)
        state, i = res.state, i + chunk
        rec = system.diagnostics(state, i * dt)
        records.append(rec)
        on_record(rec)
        write_snapshot(out / f"snapshot_{i:06d}.kvhb", state, grid, cfg.hbar, i * dt)
    return RunResult(state, n * dt, records)


# -- check --------------------------------------------------------------------------------


def _band_limited(grid: PhaseSpaceGrid, rng: np.random.Generator, modes: int = 3, terms: int = 6) -> np.ndarray:
    f = np.zeros(grid.shape)
    for _ in range(terms):
        a, b = rng.integers(-modes, modes + 1, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        f += rng.normal() * np.cos(2 * np.pi * (a * (grid.Q - grid.q_min) / grid.Lq
                                                 + b * (grid.P - grid.p_min) / grid.Lp) + phase)
    return f / terms


def random_closure_state(grid: PhaseSpaceGrid, rng: np.random.Generator, width: float | None = None) -> np.ndarray:
    """Pure two-level state: Gaussian density with a smooth random Bloch direction."""
    width = width or 0.1 * min(grid.Lq, grid.Lp)
    cq = rng.uniform(-0.1, 0.1) * grid.Lq
    cp = rng.uniform(-0.1, 0.1) * grid.Lp
    D = np.exp(-((grid.Q - cq) ** 2 + (grid.P - cp) ** 2) / (2 * width**2))
    D /= grid.integrate(D)
    n = np.stack([_band_limited(grid, rng, 1) + rng.normal() for _ in range(3)])
    n /= np.sqrt(np.sum(n * n, axis=0))
    return pauli_expand(0.5 * D, 0.5 * D * n)


def check_command(cfg: cfgmod.RunConfig, output_dir: str | None = None) -> int:
    """Invariant suite on randomized inputs drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    grid = cfg.grid.build()
    results: list[tuple[str, float, float]] = []

    def record(name, value, tol):
        results.append((name, float(value), tol))

    f, g_, h_ = (_band_limited(grid, rng) for _ in range(3))
    spectral = grid.partial_q(f)
    record("spectral_vs_fd8", np.max(np.abs(spectral - fd8_partial(f, 0, grid.dq))) / np.max(np.abs(spectral)), 1e-6)
    pb = grid.poisson_bracket
    record("bracket_antisymmetry", np.max(np.abs(pb(f, g_) + pb(g_, f))), 1e-12)
    jac = pb(pb(f, g_), h_) + pb(pb(g_, h_), f) + pb(pb(h_, f), g_)
    record("jacobi", np.max(np.abs(jac)), 1e-6)

    H0, field_polys = cfg.hamiltonian.polynomials()
    psi1 = np.sqrt(np.abs(random_closure_state(grid, rng)[0, 0])) * np.exp(1j * _band_limited(grid, rng))
    psi2 = np.sqrt(np.abs(random_closure_state(grid, rng)[0, 0])) * np.exp(1j * _band_limited(grid, rng))
    lhs = grid.integrate(np.conj(psi1) * prequantum_apply(grid, H0, psi2, cfg.hbar))
    rhs = grid.integrate(np.conj(prequantum_apply(grid, H0, psi1, cfg.hbar)) * psi2)
    record("prequantum_hermiticity", abs(lhs - rhs) / max(abs(lhs), 1e-300), 1e-8)

    H = HybridHamiltonian.from_pauli(grid, H0, field_polys, cfg.hbar)
    model = ClosureModel(grid, H, cfg.hbar, d_floor=cfg.d_floor, eps=cfg.eps)
    spin = SpinModel(grid, SpinHamiltonian.from_hybrid(H, cfg.hbar), cfg.hbar, cfg.d_floor, eps=cfg.eps)
    P = random_closure_state(grid, rng)
    dP = pauli_expand(_band_limited(grid, rng), np.stack([_band_limited(grid, rng) for _ in range(3)]))
    dP = dP * np.real(P[0, 0] + P[1, 1])  # keep the variation inside the support
    G = model.variational_derivative(P)
    record("dh_dP_hermitian", hermitian_defect(G), 1e-12)
    e = 1e-5
    fd = (model.energy(P + e * dP) - model.energy(P - e * dP)) / (2 * e)
    an = grid.integrate(np.real(tr_mm(G, dP)))
    record("gateaux_dh_dP", abs(fd - an) / max(abs(an), 1e-300), 1e-5)

    U = unitary_group.rvs(2, random_state=rng)
    record("equivariance_unitary", equivariance_defect(model, P, U), 1e-12)
    if grid.nq == grid.np and grid.q_min == grid.p_min == -grid.q_max == -grid.p_max:
        record("equivariance_quarter_turn", rotation_defect(model, P), 1e-10)

    dPdt = model.rhs(P)
    a = spin_from_density(dPdt, cfg.hbar)
    b = spin.rhs(spin_from_density(P, cfg.hbar))
    dual = max(np.max(np.abs(a.D - b.D)) / np.max(np.abs(b.D)), np.max(np.abs(a.s - b.s)) / np.max(np.abs(b.s)))
    record("dual_path", dual, 1e-8)
    mapped = closure_rhs_in_spin_variables(model, spin_from_density(P, cfg.hbar))
    record("dual_path_roundtrip", np.max(np.abs(mapped.D - a.D)), 1e-14)

    A = pauli_expand(_band_limited(grid, rng), np.stack([_band_limited(grid, rng) for _ in range(3)]))
    fA = LinearFunctional(grid.spectral_jet(A))
    energy = ClosureEnergy()
    record("closure_bracket_antisymmetry",
           abs(model.bracket(fA, energy, P) + model.bracket(energy, fA, P)), 1e-12)
    hd = model.hybrid_density(P)
    record("hybrid_density_trace", np.max(np.abs(np.real(hd[0, 0] + hd[1, 1] - P[0, 0] - P[1, 1]))), 1e-10)

    failed = 0
    for name, value, tol in results:
        ok = value < tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e} (tol {tol:.0e})")
    return EXIT_OK if failed == 0 else EXIT_FAIL


# -- reduce -------------------------------------------------------------------------------


def _l2(a: np.ndarray, ref: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(a - ref) ** 2) / np.sum(np.abs(ref) ** 2)))


def reduce_command(cfg: cfgmod.RunConfig, against: str, tol: float | None = None,
                   output_dir: str | None = None) -> int:
    """Run the closure next to a reduced model and report the largest divergence."""
    grid = cfg.grid.build()
    H0, field_polys = cfg.hamiltonian.polynomials()
    closure_cfg = copy.deepcopy(cfg)
    closure_cfg.model = "closure"
    P0 = cfgmod.initial_state(closure_cfg, grid)
    D0 = np.real(P0[0, 0] + P0[1, 1])
    integ = cfg.integrator
    hbar = cfg.hbar

    if against == "classical":
        H = HybridHamiltonian.from_pauli(grid, H0, [Polynomial()] * 3, hbar)
        closure = ClosureSystem(ClosureModel(grid, H, hbar, cfg.d_floor, eps=cfg.eps), residuals=False)
        other = LiouvilleSystem(grid, H0)
        states = [P0, D0]
        measure = lambda P, rho, t: _l2(np.real(P[0, 0] + P[1, 1]), rho)  # noqa: E731
    elif against == "quantum":
        const = [float(f(np.zeros(1), np.zeros(1))[0]) for f in field_polys]
        Hq = HybridHamiltonian.from_pauli(grid, Polynomial(), [Polynomial({(0, 0): c}) for c in const], hbar)
        closure = ClosureSystem(ClosureModel(grid, Hq, hbar, cfg.d_floor, eps=cfg.eps), residuals=False)
        Hmat = 0.5 * hbar * sum(c * s for c, s in zip(const, PAULI))
        rho0 = grid.integrate(P0)
        other = None
        states = [P0, None]

        def measure(P, _, t):
            U = scipy.linalg.expm(-1j * Hmat * t / hbar)
            return float(np.max(np.abs(grid.integrate(P) - U @ rho0 @ U.conj().T)))
    elif against in ("meanfield", "ehrenfest"):
        H = HybridHamiltonian.from_pauli(grid, H0, field_polys, hbar)
        closure = ClosureSystem(ClosureModel(grid, H, hbar, cfg.d_floor, eps=cfg.eps), residuals=False)
        if against == "meanfield":
            other = MeanFieldSystem(MeanFieldModel(grid, H, hbar))
            states = [P0, (D0, grid.integrate(P0))]

            def measure(P, s, t):
                return max(_l2(np.real(P[0, 0] + P[1, 1]), s[0]), float(np.max(np.abs(grid.integrate(P) - s[1]))))
        else:
            other = EhrenfestSystem(EhrenfestModel(grid, H, hbar, cfg.d_floor, cfg.eps))
            states = [P0, P0.copy()]

            def measure(P, s, t):
                return max(_l2(np.real(P[0, 0] + P[1, 1]), np.real(s[0, 0] + s[1, 1])),
                           float(np.max(np.abs(grid.integrate(P) - grid.integrate(s)))))
    else:
        print(f"unknown reduction {against!r}", file=sys.stderr)
        return EXIT_CONFIG

    rows = [{"t": 0.0, "divergence": measure(states[0], states[1], 0.0)}]
    try:
        for i in range(1, integ.n_steps + 1):
            states[0] = step(closure, states[0], integ.dt, integ.method)
            if other is not None:
                states[1] = step(other, states[1], integ.dt, integ.method)
            if i % integ.snapshot_every == 0 or i == integ.n_steps:
                rows.append({"t": i * integ.dt, "divergence": measure(states[0], states[1], i * integ.dt)})
    except DegenerateDensity as exc:
        print(f"reduction aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    worst = max(r["divergence"] for r in rows)
    if not math.isfinite(worst):
        print("reduction aborted: non-finite divergence", file=sys.stderr)
        return EXIT_ABORT
    write_table(_out_dir(cfg, output_dir) / f"reduce_{against}.csv", rows)
    print(f"max divergence closure vs {against}: {worst:.6e}")
    if tol is not None and worst > tol:
        return EXIT_FAIL
    return EXIT_OK


# -- convergence --------------------------------------------------------------------------


def convergence_command(cfg: cfgmod.RunConfig, dts: list[float], output_dir: str | None = None) -> int:
    grid = cfg.grid.build()
    system = cfgmod.build_system(cfg, grid)
    state = cfgmod.initial_state(cfg, grid)
    try:
        table = convergence_study(system, state, cfg.integrator.t_final, dts, cfg.integrator.method)
    except (NonFiniteState, DegenerateDensity) as exc:
        print(f"convergence study aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    write_table(_out_dir(cfg, output_dir) / "convergence.csv", table.rows())
    print(f"t_final: {table.t_final:.17g}")
    print("dt,error,difference")
    for r in table.rows():
        print(f"{r['dt']:.6g},{r['error']:.6e},{r['difference']:.6e}")
    print("order: undefined" if math.isnan(table.order) else f"order: {table.order:.4f}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvh", description="Koopman-van Hove and hybrid closure simulations")
    parser.add_argument("--output-dir", default=None, help="base directory for every output path")
    parser.add_argument("--threads", type=int, default=None, help="FFT worker threads (sets KVH_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "check"):
        p = sub.add_parser(name)
        p.add_argument("config")
    p = sub.add_parser("reduce")
    p.add_argument("config")
    p.add_argument("--against", required=True, choices=["classical", "quantum", "meanfield", "ehrenfest"])
    p.add_argument("--tol", type=float, default=None, help="exit with status 1 if the divergence exceeds this")
    p = sub.add_parser("convergence")
    p.add_argument("config")
    p.add_argument("--dts", type=float, nargs="+", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        os.environ["KVH_THREADS"] = str(args.threads)
    try:
        cfg = _load(args.config)
    except cfgmod.ConfigErrors as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return run_command(cfg, args.output_dir)
        if args.command == "check":
            return check_command(cfg, args.output_dir)
        if args.command == "reduce":
            return reduce_command(cfg, args.against, args.tol, args.output_dir)
        return convergence_command(cfg, args.dts, args.output_dir)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
