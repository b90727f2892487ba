"""Stochastic trajectory engine.

Each step draws one bath increment ``dw`` per channel, then ``N_HS``
auxiliary pairs ``(du, dv)`` with ``dw`` held fixed. Every auxiliary pair
propagates the current determinant to a candidate determinant; the
candidates are combined into a one-body density matrix, and the
determinant of its ``N`` most occupied natural orbitals becomes the state
for the next step.

Random numbers come from counter-based Philox streams keyed by
``(master_seed, trajectory, step, stream)`` so any trajectory can be
regenerated bit-exactly, independent of scheduling.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.stats
from numpy.typing import NDArray

from .grid import Grid, make_grid, warn_if_edge_density
from .operators import EigenBasis, LindbladChannel, Potential, eigenstates, make_channel
from .propagate import NoiseIncrement, build_generator, propagate
from .state import (
    SlaterState,
    TrajectoryAbort,
    average_projectors,
    collapse_to_slater,
    init_theta_state,
    lindblad_expectation,
    lowdin,
    observables,
    superposition_dm,
)

log = logging.getLogger(__name__)

OBSERVABLES = ("X", "P", "H", "T")
MAX_FAILURE_FRACTION = 0.01

STREAM_DW = 0
STREAM_INITIAL = 1
STREAM_HS = 2


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineSettings:
    """Numerical knobs of the unraveling that are not physical parameters."""

    dt: float = 0.25
    t_final: float = 25.0
    n_hs: int = 10
    propagator: str = "newton"
    newton_tol: float = 1e-9
    convention: str = "complex"
    combine: str = "wavefunction"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_hs < 1:
            raise ValueError("n_hs must be >= 1")
        if self.convention not in ("complex", "real"):
            raise ValueError(f"unknown convention {self.convention!r}")
        if self.combine not in ("wavefunction", "density"):
            raise ValueError(f"unknown combine mode {self.combine!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def times(self) -> NDArray[np.float64]:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class Model:
    """Immutable inputs shared by all trajectories."""

    grid: Grid
    potential: Potential
    channels: tuple[LindbladChannel, ...]
    initial_states: tuple[SlaterState, ...]
    initial_weights: tuple[float, ...] = (1.0,)

    @property
    def n_particles(self) -> int:
        return self.initial_states[0].n_particles


def build_model(
    potential: Potential,
    grid: Grid,
    n_particles: int,
    theta: float,
    gamma: float,
    omega_l: float,
    basis: EigenBasis | None = None,
) -> Model:
    """Pure ``|Phi_theta>`` initial state with a single ladder channel (none if ``gamma == 0``)."""
    if basis is None:
        basis = eigenstates(potential, grid, n_particles + 1)
    initial = init_theta_state(grid, basis, n_particles, theta)
    warn_if_edge_density(grid, initial.orbitals)
    channels = ()
    if gamma > 0:
        channels = (make_channel(potential.mass, omega_l, gamma, n_particles),)
    return Model(grid, potential, channels, (initial,))


def harmonic_model(n_particles: int = 8, theta: float = np.pi / 4, gamma: float = 0.2,
                   box_length: float = 16.0, n_points: int = 128) -> Model:
    from .operators import harmonic

    return build_model(harmonic(), make_grid(box_length, n_points), n_particles, theta, gamma, 1.0)


# --------------------------------------------------------------------------
# random numbers


def stream_rng(master_seed: int, trajectory: int, step: int, stream: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trajectory), int(step), int(stream)))
    return np.random.Generator(np.random.Philox(seq))


def wiener(rng: np.random.Generator, dt: float, n_channels: int = 1, convention: str = "complex") -> NoiseIncrement:
    """One increment ``(dw, du, dv)`` per channel.

    ``du``, ``dv`` are real normals with variance ``dt``. ``dw`` is complex
    (``E|dw|^2 = dt``, ``E dw^2 = 0``) for the complex convention, real for the
    real-part convention.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    s = np.sqrt(dt)
    if convention == "complex":
        dw = (rng.standard_normal(n_channels) + 1j * rng.standard_normal(n_channels)) * (s / np.sqrt(2.0))
    else:
        dw = rng.standard_normal(n_channels) * s + 0j
    du = rng.standard_normal(n_channels) * s
    dv = rng.standard_normal(n_channels) * s
    return NoiseIncrement(dw, du, dv)


def step_noise(
    master_seed: int, trajectory: int, step: int, dt: float, n_channels: int, n_hs: int, convention: str
) -> NoiseIncrement:
    """``dw`` from its own stream; sample ``k`` of ``(du, dv)`` from stream ``STREAM_HS + k``."""
    dw = wiener(stream_rng(master_seed, trajectory, step, STREAM_DW), dt, n_channels, convention).dw
    du = np.empty((n_hs, n_channels))
    dv = np.empty((n_hs, n_channels))
    for k in range(n_hs):
        inc = wiener(stream_rng(master_seed, trajectory, step, STREAM_HS + k), dt, n_channels, convention)
        du[k], dv[k] = inc.du, inc.dv
    return NoiseIncrement(dw, du, dv)


# --------------------------------------------------------------------------
# one step and one trajectory


def hs_step(
    model: Model,
    state: SlaterState,
    l_expect: Sequence[complex],
    settings: EngineSettings,
    noise: NoiseIncrement,
) -> tuple[SlaterState, tuple[complex, ...]]:
    """Propagate with fixed ``dw`` over the HS samples in ``noise`` and collapse."""
    grid = model.grid
    gen = build_generator(
        grid, model.potential, model.channels, l_expect, settings.dt, noise, settings.convention
    )
    moved = propagate(grid, gen, state.orbitals, settings.propagator, settings.newton_tol)
    if moved.ndim == 2:
        moved = moved[None]
    if not np.all(np.isfinite(moved)):
        raise TrajectoryAbort("non-finite orbitals after propagation")
    samples = np.empty_like(moved)
    log_amp = np.empty(len(moved))
    for k, block in enumerate(moved):
        samples[k], log_amp[k] = lowdin(grid, block)
    if len(samples) == 1:
        new = SlaterState(grid, samples[0])
    else:
        if settings.combine == "wavefunction":
            amps = np.exp(log_amp - log_amp.max())
            dm = superposition_dm(grid, samples, amps)
        else:
            dm = average_projectors(grid, samples)
        new = collapse_to_slater(dm, state.n_particles, previous=state)
    return new, tuple(lindblad_expectation(new, ch) for ch in model.channels)


@dataclass
class TrajectoryResult:
    index: int
    seed: int
    times: NDArray[np.float64]
    X: NDArray[np.float64]
    P: NDArray[np.float64]
    H: NDArray[np.float64]
    T: NDArray[np.float64]
    L_expect: NDArray[np.complex128]

    def series(self, name: str) -> NDArray[np.float64]:
        return getattr(self, name)


def _pick_initial(model: Model, master_seed: int, index: int) -> SlaterState:
    if len(model.initial_states) == 1:
        return model.initial_states[0]
    w = np.asarray(model.initial_weights, dtype=float)
    rng = stream_rng(master_seed, index, 0, STREAM_INITIAL)
    return model.initial_states[int(rng.choice(len(w), p=w / w.sum()))]


def run_trajectory(model: Model, settings: EngineSettings, master_seed: int, index: int = 0) -> TrajectoryResult:
    """Evolve one trajectory from ``t = 0`` to ``t_final``; deterministic in ``(master_seed, index)``."""
    n_steps = settings.n_steps
    n_ch = len(model.channels)
    state = _pick_initial(model, master_seed, index)
    rows = np.empty((n_steps + 1, 4))
    ells = np.zeros((n_steps + 1, n_ch), dtype=complex)
    obs = observables(state, model.potential, model.channels)
    rows[0] = obs.X, obs.P, obs.H, obs.T
    ells[0] = obs.L_expect
    l_now = obs.L_expect
    n_hs = settings.n_hs if n_ch else 1
    for step in range(n_steps):
        if n_ch:
            noise = step_noise(master_seed, index, step, settings.dt, n_ch, n_hs, settings.convention)
        else:
            noise = NoiseIncrement.zeros(1, 1)
        state, l_now = hs_step(model, state, l_now, settings, noise)
        obs = observables(state, model.potential, model.channels)
        rows[step + 1] = obs.X, obs.P, obs.H, obs.T
        ells[step + 1] = obs.L_expect
    if not np.all(np.isfinite(rows)):
        raise TrajectoryAbort("non-finite observables")
    return TrajectoryResult(index, master_seed, settings.times(), *rows.T.copy(), ells)


# --------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleStats:
    """Per-time statistics of X, P, H, T.

    ``run_means[name]`` has shape ``(n_runs, n_times)``. ``mean`` and ``sem``
    are taken across runs (across trajectories when ``n_runs == 1``);
    ``ci_lo``/``ci_hi`` are Student-t intervals at ``ci_level``.
    """

    times: NDArray[np.float64]
    n_traj: int
    n_runs: int
    ci_level: float
    run_means: dict[str, NDArray[np.float64]]
    traj_sem: dict[str, NDArray[np.float64]]
    mean: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    sem: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    ci_lo: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    ci_hi: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    failures: list[tuple[int, str]] = field(default_factory=list)
    run_counts: list[int] = field(default_factory=list)


def confidence_halfwidth(samples: NDArray, level: float, axis: int = 0) -> tuple[NDArray, NDArray, NDArray]:
    """Mean, standard error and Student-t half-width along ``axis``."""
    n = samples.shape[axis]
    mean = samples.mean(axis=axis)
    if n < 2:
        zero = np.zeros_like(mean)
        return mean, zero, zero
    sem = samples.std(axis=axis, ddof=1) / np.sqrt(n)
    q = scipy.stats.t.ppf(0.5 * (1.0 + level), n - 1)
    return mean, sem, q * sem


def aggregate(
    results: Sequence[TrajectoryResult],
    n_traj: int,
    n_runs: int,
    ci_level: float,
    failures: Sequence[tuple[int, str]] = (),
) -> EnsembleStats:
    """Order-insensitive reduction of trajectory results into ensemble statistics."""
    if not results:
        raise EnsembleError("all trajectories failed")
    by_index = sorted(results, key=lambda r: r.index)
    times = by_index[0].times
    groups: list[list[TrajectoryResult]] = [[] for _ in range(n_runs)]
    for r in by_index:
        groups[r.index // n_traj].append(r)
    if any(len(g) == 0 for g in groups):
        raise EnsembleError("a run lost all of its trajectories")
    stats = EnsembleStats(times, n_traj, n_runs, ci_level, {}, {}, failures=list(failures),
                          run_counts=[len(g) for g in groups])
    for name in OBSERVABLES:
        per_run = [np.stack([r.series(name) for r in g]) for g in groups]
        stats.run_means[name] = np.stack([a.mean(axis=0) for a in per_run])
        stats.traj_sem[name] = np.stack(
            [a.std(axis=0, ddof=1) / np.sqrt(len(a)) if len(a) > 1 else np.zeros(len(times)) for a in per_run]
        )
        if n_runs >= 2:
            mean, sem, half = confidence_halfwidth(stats.run_means[name], ci_level)
        else:
            mean, sem, half = confidence_halfwidth(per_run[0], ci_level)
        stats.mean[name], stats.sem[name] = mean, sem
        stats.ci_lo[name], stats.ci_hi[name] = mean - half, mean + half
    return stats


def _run_one(args) -> TrajectoryResult | tuple[int, str]:
    model, settings, seed, index = args
    try:
        return run_trajectory(model, settings, seed, index)
    except TrajectoryAbort as exc:
        return index, str(exc)


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_ensemble(
    model: Model,
    settings: EngineSettings,
    n_traj: int,
    n_runs: int = 1,
    master_seed: int = 0,
    ci_level: float = 0.75,
    workers: int | None = None,
) -> EnsembleStats:
    """Run ``n_runs * n_traj`` independent trajectories and reduce them.

    Trajectory ``j`` of run ``r`` has global index ``r * n_traj + j``; its
    noise depends only on that index and ``master_seed``.
    """
    if n_traj < 2 or n_runs < 1:
        raise ValueError("need n_traj >= 2 and n_runs >= 1")
    if not 0 < ci_level < 1:
        raise ValueError("ci_level must lie in (0, 1)")
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(model, settings, master_seed, i) for i in range(n_traj * n_runs)]
    if workers == 1:
        outcomes = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    results = [o for o in outcomes if isinstance(o, TrajectoryResult)]
    failures = [o for o in outcomes if not isinstance(o, TrajectoryResult)]
    for index, msg in failures:
        log.warning("trajectory %d aborted: %s", index, msg)
    if len(failures) > MAX_FAILURE_FRACTION * len(jobs):
        raise EnsembleError(f"{len(failures)} of {len(jobs)} trajectories failed")
    return aggregate(results, n_traj, n_runs, ci_level, failures)
