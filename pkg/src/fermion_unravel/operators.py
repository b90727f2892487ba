"""Single-particle Hamiltonian, trap potentials, eigenstates and the ladder Lindblad channel.

The bath channel is the (scaled) harmonic lowering operator

    l = c * (x + i p / (m w_l)),    c = sqrt(m w_l gamma / (2 hbar N)),

split into Hermitian pieces ``l = R + i S`` with ``R = c x`` (diagonal on the
grid) and ``S = c p / (m w_l)`` (diagonal in momentum space). Their
commutator ``C = i[R, S] = -gamma / (2N)`` is a plain number, so
``l^dagger l = R^2 + S^2 + C``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .grid import HBAR, Grid, apply_k_diagonal, inner, kinetic_multiplier

PotentialKind = Literal["harmonic", "double_well"]


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class Potential:
    """Harmonic trap, optionally with a Gaussian barrier at the origin.

    ``V(x) = m w^2 x^2 / 2 + V_B exp(-x^2 / (2 sigma_B^2))`` for the double well.
    """

    kind: PotentialKind = "harmonic"
    mass: float = 1.0
    omega: float = 1.0
    barrier_height: float = 8.0
    barrier_width: float = 0.2

    def __post_init__(self):
        if self.kind not in ("harmonic", "double_well"):
            raise OperatorError(f"unknown potential kind {self.kind!r}")
        if not self.mass > 0 or not self.omega > 0:
            raise OperatorError("mass and omega must be positive")
        if self.kind == "double_well" and not self.barrier_width > 0:
            raise OperatorError("barrier_width must be positive")

    def values(self, grid: Grid) -> NDArray[np.float64]:
        x = grid.x
        v = 0.5 * self.mass * self.omega**2 * x**2
        if self.kind == "double_well":
            v = v + self.barrier_height * np.exp(-(x**2) / (2.0 * self.barrier_width**2))
        return v


def harmonic(mass: float = 1.0, omega: float = 1.0) -> Potential:
    return Potential("harmonic", mass, omega)


def double_well(
    mass: float = 1.0,
    omega: float = 1.0,
    barrier_height: float = 8.0,
    barrier_width: float = 0.2,
) -> Potential:
    return Potential("double_well", mass, omega, barrier_height, barrier_width)


def apply_h(pot: Potential, grid: Grid, phi: NDArray) -> NDArray:
    """``h phi = (p^2 / 2m + V(x)) phi``."""
    return apply_k_diagonal(grid, kinetic_multiplier(grid, pot.mass), phi) + pot.values(grid) * phi


def kinetic_matrix(grid: Grid, mass: float) -> NDArray[np.float64]:
    """Dense kinetic matrix; real symmetric on the periodic FFT grid."""
    eye = np.eye(grid.n_points)
    t = apply_k_diagonal(grid, kinetic_multiplier(grid, mass), eye.T).T
    return np.real(t)


def hamiltonian_matrix(pot: Potential, grid: Grid) -> NDArray[np.float64]:
    h = kinetic_matrix(grid, pot.mass) + np.diag(pot.values(grid))
    return 0.5 * (h + h.T)


@dataclass(frozen=True)
class EigenBasis:
    """Lowest eigenstates of h, rows normalized so that ``sum |psi|^2 dx = 1``."""

    orbitals: NDArray[np.complex128]
    energies: NDArray[np.float64]

    def __len__(self) -> int:
        return len(self.energies)


def fix_phase(orbitals: NDArray) -> NDArray:
    """Rotate each row so that its largest-magnitude component is real and positive.

    Mirror-symmetric ties (parity eigenstates) go to the rightmost candidate,
    which gives harmonic eigenstates the usual Hermite sign (positive as x -> +inf).
    """
    orbitals = np.atleast_2d(orbitals)
    mag = np.abs(orbitals)
    near_max = mag >= (1.0 - 1e-8) * mag.max(axis=-1, keepdims=True)
    idx = orbitals.shape[-1] - 1 - np.argmax(near_max[:, ::-1], axis=-1)
    pivot = orbitals[np.arange(len(orbitals)), idx]
    return orbitals * (np.abs(pivot) / np.where(pivot == 0, 1.0, pivot))[:, None]


def eigenstates(pot: Potential, grid: Grid, n_states: int) -> EigenBasis:
    if n_states < 0 or n_states > grid.n_points:
        raise OperatorError(f"n_states must be in [0, {grid.n_points}], got {n_states}")
    if n_states == 0:
        return EigenBasis(np.zeros((0, grid.n_points), complex), np.zeros(0))
    h = hamiltonian_matrix(pot, grid)
    try:
        energies, vecs = scipy.linalg.eigh(h, subset_by_index=(0, n_states - 1))
    except np.linalg.LinAlgError as exc:
        raise OperatorError(f"eigensolver failed: {exc}") from exc
    orbitals = fix_phase(vecs.T.astype(complex)) / np.sqrt(grid.dx)
    return EigenBasis(orbitals, energies)


@dataclass(frozen=True)
class LindbladChannel:
    """One-body channel ``l = R + i S`` with ``R = r_coef x``, ``S = s_coef p`` and ``i[R,S] = scalar``."""

    mass: float
    omega_l: float
    gamma: float
    n_particles: int

    def __post_init__(self):
        for name in ("mass", "omega_l", "gamma"):
            if not getattr(self, name) > 0:
                raise OperatorError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_particles < 1:
            raise OperatorError(f"n_particles must be >= 1, got {self.n_particles}")

    @property
    def prefactor(self) -> float:
        return float(np.sqrt(self.mass * self.omega_l * self.gamma / (2.0 * HBAR * self.n_particles)))

    @property
    def r_coef(self) -> float:
        return self.prefactor

    @property
    def s_coef(self) -> float:
        return self.prefactor / (self.mass * self.omega_l)

    @property
    def scalar(self) -> float:
        # i [c x, c p/(m w)] = i * c^2/(m w) * i hbar
        return -self.r_coef * self.s_coef * HBAR

    def r_values(self, grid: Grid) -> NDArray[np.float64]:
        return self.r_coef * grid.x

    def s_multiplier(self, grid: Grid) -> NDArray[np.float64]:
        return self.s_coef * HBAR * grid.k

    def apply_r(self, grid: Grid, phi: NDArray) -> NDArray:
        return self.r_values(grid) * phi

    def apply_s(self, grid: Grid, phi: NDArray) -> NDArray:
        return apply_k_diagonal(grid, self.s_multiplier(grid), phi)

    def apply(self, grid: Grid, phi: NDArray) -> NDArray:
        return self.apply_r(grid, phi) + 1j * self.apply_s(grid, phi)

    def apply_dagger(self, grid: Grid, phi: NDArray) -> NDArray:
        return self.apply_r(grid, phi) - 1j * self.apply_s(grid, phi)

    def matrix(self, grid: Grid) -> NDArray[np.complex128]:
        eye = np.eye(grid.n_points, dtype=complex)
        return self.apply(grid, eye.T).T


def make_channel(
    mass: float,
    omega_l: float,
    gamma: float,
    n_particles: int,
    grid: Grid | None = None,
) -> LindbladChannel:
    """Build the ladder channel; with a grid, also check ``l^dag l = R^2 + S^2 + C``."""
    channel = LindbladChannel(float(mass), float(omega_l), float(gamma), int(n_particles))
    if grid is not None:
        err = decomposition_residual(channel, grid)
        if err > 1e-8:
            raise OperatorError(f"l^dag l decomposition residual {err:.2e} on this grid")
    return channel


def smooth_probe(grid: Grid, seed: int = 0) -> NDArray[np.complex128]:
    """Band-limited random wavepacket, well inside the box and below Nyquist."""
    rng = np.random.default_rng(seed)
    width = grid.box_length / 16
    x0, k0 = rng.uniform(-1, 1) * width, rng.uniform(-1, 1) * 0.1 * grid.k_max
    phi = np.exp(-((grid.x - x0) ** 2) / (2 * width**2) + 1j * k0 * grid.x)
    return phi / np.sqrt(np.real(inner(grid, phi, phi)))


def decomposition_residual(channel: LindbladChannel, grid: Grid, phi: NDArray | None = None) -> float:
    """Relative norm of ``(l^dag l - R^2 - S^2 - C) phi``."""
    if phi is None:
        phi = smooth_probe(grid)
    lhs = channel.apply_dagger(grid, channel.apply(grid, phi))
    r, s = channel.apply_r, channel.apply_s
    rhs = r(grid, r(grid, phi)) + s(grid, s(grid, phi)) + channel.scalar * phi
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))


def matrix_elements(grid: Grid, basis: EigenBasis, apply_op) -> NDArray[np.complex128]:
    """``M_ij = <psi_i | op | psi_j>`` for ``apply_op(phi)`` acting on rows."""
    op_psi = apply_op(basis.orbitals)
    return np.conj(basis.orbitals) @ op_psi.T * grid.dx
