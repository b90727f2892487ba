"""``fermion-unravel`` command line: simulate, reference and eigenstates.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ConfigError, SimConfig, format_config, parse_assignment, parse_config
from .grid import Grid, GridError, make_grid
from .operators import EigenBasis, OperatorError, Potential, eigenstates, make_channel
from .reference import (
    DENSE_MAX_DIM,
    OracleError,
    PauliSystem,
    analytic_harmonic_xp,
    dense_model,
    exact_lindblad_dense,
    expectation,
    kinetic_diagonal,
    pauli_evolve,
    pauli_observables,
    pauli_rates,
    theta_populations,
)
from .state import TrajectoryAbort, observables
from .unravel import OBSERVABLES, EngineSettings, EnsembleError, EnsembleStats, Model, build_model, run_ensemble

log = logging.getLogger("fermion_unravel")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

ENSEMBLE_COLUMNS = (
    ["t"]
    + [f"{name}_{stat}" for name in OBSERVABLES for stat in ("mean", "sem")]
    + [f"{name}_{bound}" for name in OBSERVABLES for bound in ("ci_lo", "ci_hi")]
)
RUN_COLUMNS = ["t"] + [f"{name}_{stat}" for name in OBSERVABLES for stat in ("mean", "sem")]
ANALYTIC_COLUMNS = ["t", "X", "P"]
DENSE_COLUMNS = ["t", "X", "P", "H", "T"]


def code_version() -> str:
    try:
        return version("fermion-unravel")
    except PackageNotFoundError:
        return "unknown"


# --------------------------------------------------------------------------
# building blocks from a config


def potential_of(cfg: SimConfig) -> Potential:
    return Potential(cfg.kind, cfg.mass, cfg.omega, cfg.barrier_height, cfg.barrier_width)


def grid_of(cfg: SimConfig) -> Grid:
    return make_grid(cfg.box_length, cfg.n_points)


def settings_of(cfg: SimConfig) -> EngineSettings:
    return EngineSettings(
        dt=cfg.dt,
        t_final=cfg.n_steps * cfg.dt,
        n_hs=cfg.n_hs,
        propagator=cfg.propagator,
        newton_tol=cfg.newton_tol,
        convention=cfg.convention,
        combine=cfg.combine,
    )


def model_of(cfg: SimConfig, basis: EigenBasis | None = None) -> Model:
    return build_model(potential_of(cfg), grid_of(cfg), cfg.n_particles, cfg.theta, cfg.gamma, cfg.omega_l, basis)


def time_mesh(cfg: SimConfig) -> np.ndarray:
    """Output times shared by every subcommand."""
    return settings_of(cfg).times()


# --------------------------------------------------------------------------
# CSV output


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    # repr round-trips floats exactly and does not depend on locale
    return repr(float(value))


def write_csv(path: Path, header: Sequence[str], columns: Iterable[np.ndarray]) -> None:
    cols = [np.asarray(c) if np.issubdtype(np.asarray(c).dtype, np.integer) else np.asarray(c, dtype=float)
            for c in columns]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([_fmt(v) for v in row])


def ensemble_columns(stats: EnsembleStats) -> list[np.ndarray]:
    cols = [stats.times]
    for name in OBSERVABLES:
        cols += [stats.mean[name], stats.sem[name]]
    for name in OBSERVABLES:
        cols += [stats.ci_lo[name], stats.ci_hi[name]]
    return cols


def write_outputs(out: Path, stats: EnsembleStats) -> None:
    write_csv(out / "ensemble.csv", ENSEMBLE_COLUMNS, ensemble_columns(stats))
    for k in range(stats.n_runs):
        cols = [stats.times]
        for name in OBSERVABLES:
            cols += [stats.run_means[name][k], stats.traj_sem[name][k]]
        write_csv(out / "runs" / f"run_{k}.csv", RUN_COLUMNS, cols)


def write_manifest(out: Path, cfg: SimConfig, command: str, extra: dict[str, str]) -> None:
    lines = [
        "# fermion-unravel run manifest; the sections above [manifest] re-parse to the same config",
        format_config(cfg),
        "[manifest]",
        f"command = {command}",
        f"version = {code_version()}",
    ]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: SimConfig, workers: int | None = None) -> Path:
    out = Path(cfg.output_path)
    model = model_of(cfg)
    settings = settings_of(cfg)
    log.info(
        "simulate: N=%d, %d runs x %d trajectories, %d steps, workers=%s",
        cfg.n_particles, cfg.n_runs, cfg.n_traj, cfg.n_steps, workers,
    )
    start = time.perf_counter()
    stats = run_ensemble(
        model, settings, cfg.n_traj, cfg.n_runs, cfg.master_seed, cfg.ci_level, workers=workers
    )
    elapsed = time.perf_counter() - start
    write_outputs(out, stats)
    extra = {
        "master_seed": str(cfg.master_seed),
        "seeding": "trajectory i draws from Philox streams keyed by (master_seed, i, step, stream)",
        "workers": str(workers),
        "wall_seconds": f"{elapsed:.3f}",
        "failures": str(len(stats.failures)),
    }
    failed = {index for index, _ in stats.failures}
    for k in range(cfg.n_runs):
        lo, hi = k * cfg.n_traj, (k + 1) * cfg.n_traj - 1
        extra[f"run_{k}_trajectories"] = f"{lo}..{hi}"
        extra[f"run_{k}_failures"] = str(sum(lo <= i <= hi for i in failed))
    write_manifest(out, cfg, "simulate", extra)
    return out


def _initial_xp(cfg: SimConfig) -> tuple[float, float]:
    model = model_of(cfg)
    obs = observables(model.initial_states[0], model.potential)
    return obs.X, obs.P


def reference_analytic(cfg: SimConfig) -> tuple[list[str], list[np.ndarray]]:
    if cfg.kind != "harmonic":
        raise ConfigError("kind = double_well: the analytic reference needs kind = harmonic")
    if abs(cfg.omega_l - cfg.omega) > 1e-12:
        raise ConfigError("omega_l: the analytic reference needs omega_l equal to omega")
    t = time_mesh(cfg)
    x0, p0 = _initial_xp(cfg)
    x, p = analytic_harmonic_xp(x0, p0, cfg.mass, cfg.omega, cfg.gamma, t)
    return ANALYTIC_COLUMNS, [t, x, p]


def _basis(cfg: SimConfig) -> tuple[Grid, Potential, EigenBasis]:
    grid, pot = grid_of(cfg), potential_of(cfg)
    return grid, pot, eigenstates(pot, grid, cfg.n_basis)


def _channels(cfg: SimConfig, grid: Grid):
    if cfg.gamma == 0:
        return ()
    return (make_channel(cfg.mass, cfg.omega_l, cfg.gamma, cfg.n_particles, grid),)


def reference_pauli(cfg: SimConfig) -> tuple[list[str], list[np.ndarray]]:
    grid, pot, basis = _basis(cfg)
    rates = pauli_rates(grid, basis, _channels(cfg, grid))
    system = PauliSystem(basis.energies, rates, theta_populations(len(basis), cfg.n_particles, cfg.theta))
    t, pops = pauli_evolve(system, cfg.dt, cfg.n_steps * cfg.dt)
    h, kin = pauli_observables(pops, basis.energies, kinetic_diagonal(grid, basis, cfg.mass))
    header = ["t", "H", "T"] + [f"n_{i}" for i in range(len(basis))]
    return header, [t, h, kin, *pops.T]


def reference_dense(cfg: SimConfig) -> tuple[list[str], list[np.ndarray]]:
    if cfg.n_particles != 1:
        raise ConfigError(f"n_particles = {cfg.n_particles}: the dense reference needs n_particles = 1")
    if cfg.n_basis > DENSE_MAX_DIM:
        raise ConfigError(f"n_basis = {cfg.n_basis}: the dense reference accepts n_basis <= {DENSE_MAX_DIM}")
    grid, pot, basis = _basis(cfg)
    model = dense_model(grid, pot, basis, _channels(cfg, grid))
    c = np.zeros(len(basis), dtype=complex)
    c[0], c[1] = np.cos(cfg.theta), np.sin(cfg.theta)
    t, rhos = exact_lindblad_dense(model, np.outer(c, c.conj()), cfg.dt, cfg.n_steps * cfg.dt)
    cols = [expectation(rhos, model.observables[k]) for k in ("x", "p", "h", "t")]
    return DENSE_COLUMNS, [t, *cols]


REFERENCES = {"analytic": reference_analytic, "pauli": reference_pauli, "dense": reference_dense}


def cmd_reference(cfg: SimConfig, which: str) -> Path:
    if which not in REFERENCES:
        raise ConfigError(f"which = {which!r}: accepted values are {', '.join(REFERENCES)}")
    header, cols = REFERENCES[which](cfg)
    out = Path(cfg.output_path)
    write_csv(out / f"reference_{which}.csv", header, cols)
    write_manifest(out, cfg, f"reference {which}", {})
    return out


def cmd_eigenstates(cfg: SimConfig, n_states: int) -> Path:
    if not 0 <= n_states <= cfg.n_points:
        raise ConfigError(f"n_states = {n_states}: accepted range [0, n_points = {cfg.n_points}]")
    grid, pot = grid_of(cfg), potential_of(cfg)
    basis = eigenstates(pot, grid, n_states)
    out = Path(cfg.output_path)
    write_csv(out / "energies.csv", ["index", "energy"], [np.arange(n_states), basis.energies])
    # eigenstates of a real symmetric h are real after phase fixing
    write_csv(
        out / "orbitals.csv",
        ["x"] + [f"psi_{i}" for i in range(n_states)],
        [grid.x, *np.real(basis.orbitals)],
    )
    write_manifest(out, cfg, "eigenstates", {"n_states": str(n_states)})
    return out


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fermion-unravel",
        description="Stochastic unraveling of open-system fermion dynamics with Slater determinants.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
        p.add_argument("--config", type=Path, help="sectioned key = value config file")
        p.add_argument("--out", type=Path, required=out_required, help="output directory")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override one config key (repeatable; beats file and environment)",
        )

    p = sub.add_parser("simulate", help="run the trajectory ensemble")
    common(p)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="worker processes (default: available cores)")

    p = sub.add_parser("reference", help="write an oracle time series")
    common(p, out_required=True)
    p.add_argument("--which", required=True, choices=sorted(REFERENCES))

    p = sub.add_parser("eigenstates", help="write single-particle energies and orbitals")
    common(p, out_required=True)
    p.add_argument("--n-states", type=int, required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> SimConfig:
    overrides = dict(parse_assignment(s) for s in args.set)
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["output_path"] = str(args.out)
    return parse_config(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the config-error code
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            if args.workers is not None and args.workers < 1:
                raise ConfigError(f"workers = {args.workers}: accepted range >= 1")
            out = cmd_simulate(cfg, args.workers)
        elif args.command == "reference":
            out = cmd_reference(cfg, args.which)
        else:
            out = cmd_eigenstates(cfg, args.n_states)
    except (ConfigError, GridError, OperatorError) as exc:
        print(f"fermion-unravel: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EnsembleError, TrajectoryAbort, OracleError, ArithmeticError, OSError) as exc:
        print(f"fermion-unravel: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("wrote %s", out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
