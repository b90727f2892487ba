"""Uniform periodic 1D grid with Fourier (spectral) momentum operators.

Orbitals are plain complex numpy arrays whose last axis runs over grid
points; leading axes are treated as batch dimensions so that many orbitals
can be transformed in a single FFT call.

Atomic units throughout (hbar = m_e = 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

HBAR = 1.0

EDGE_POINTS = 4
EDGE_DENSITY_WARN = 1e-8


class GridError(ValueError):
    """Raised for invalid grid parameters or orbitals that do not fit a grid."""


@dataclass(frozen=True)
class Grid:
    """Centered uniform mesh ``x_j = -L/2 + j*dx`` with its FFT wavenumbers."""

    box_length: float
    n_points: int
    dx: float = field(init=False)
    x: NDArray[np.float64] = field(init=False, repr=False)
    k: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.box_length > 0:
            raise GridError(f"box_length must be positive, got {self.box_length}")
        n = self.n_points
        if n < 8 or n & (n - 1):
            raise GridError(f"n_points must be a power of two >= 8, got {n}")
        dx = self.box_length / n
        x = -0.5 * self.box_length + dx * np.arange(n)
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=dx)
        x.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "k", k)

    @property
    def k_max(self) -> float:
        return float(np.abs(self.k).max())

    def check(self, phi: NDArray) -> None:
        if phi.shape[-1] != self.n_points:
            raise GridError(
                f"orbital has {phi.shape[-1]} points, grid has {self.n_points}"
            )


def make_grid(box_length: float, n_points: int) -> Grid:
    return Grid(float(box_length), int(n_points))


def inner(grid: Grid, a: NDArray, b: NDArray) -> complex | NDArray:
    """Discrete ``<a|b> = sum_j conj(a_j) b_j dx`` over the last axis."""
    grid.check(a)
    grid.check(b)
    out = np.sum(np.conj(a) * b, axis=-1) * grid.dx
    return out[()] if np.ndim(out) == 0 else out


def norm2(grid: Grid, phi: NDArray) -> float | NDArray:
    return np.real(inner(grid, phi, phi))


def normalize(grid: Grid, phi: NDArray) -> NDArray:
    n = np.sqrt(norm2(grid, phi))
    return phi / np.asarray(n)[..., None]


def to_momentum(phi: NDArray) -> NDArray:
    return np.fft.fft(phi, axis=-1)


def from_momentum(phi_k: NDArray) -> NDArray:
    return np.fft.ifft(phi_k, axis=-1)


def apply_k_diagonal(grid: Grid, multiplier: NDArray, phi: NDArray) -> NDArray:
    """Apply an operator diagonal in momentum space: FFT, multiply, inverse FFT."""
    grid.check(phi)
    return from_momentum(multiplier * to_momentum(phi))


def apply_position(grid: Grid, phi: NDArray) -> NDArray:
    grid.check(phi)
    return grid.x * phi


def apply_momentum(grid: Grid, phi: NDArray) -> NDArray:
    return apply_k_diagonal(grid, HBAR * grid.k, phi)


def kinetic_multiplier(grid: Grid, mass: float) -> NDArray[np.float64]:
    if not mass > 0:
        raise GridError(f"mass must be positive, got {mass}")
    return (HBAR * grid.k) ** 2 / (2.0 * mass)


def apply_kinetic(grid: Grid, mass: float, phi: NDArray) -> NDArray:
    return apply_k_diagonal(grid, kinetic_multiplier(grid, mass), phi)


def edge_density(grid: Grid, phi: NDArray, n_edge: int = EDGE_POINTS) -> float:
    """Largest ``|phi|^2`` found on the outermost ``n_edge`` points at either end."""
    grid.check(phi)
    rho = np.abs(phi) ** 2
    edges = np.concatenate([rho[..., :n_edge], rho[..., -n_edge:]], axis=-1)
    return float(edges.max()) if edges.size else 0.0


def warn_if_edge_density(grid: Grid, phi: NDArray, threshold: float = EDGE_DENSITY_WARN) -> bool:
    """Warn when density reaches the periodic box edges; returns True if it did."""
    value = edge_density(grid, phi)
    if value > threshold:
        warnings.warn(
            f"edge density {value:.2e} exceeds {threshold:.0e}; enlarge the box",
            RuntimeWarning,
            stacklevel=2,
        )
        return True
    return False
