"""Independent oracles for the unraveling.

* closed-form damped first moments of the harmonic trap with a ladder bath;
* the Pauli rate-equation approximation with Fermi blocking;
* a dense single-particle Lindblad integrator in a truncated eigenbasis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from numpy.typing import NDArray

from .grid import HBAR, Grid, apply_kinetic, apply_momentum
from .operators import EigenBasis, LindbladChannel, Potential, matrix_elements

DENSE_MAX_DIM = 64


class OracleError(RuntimeError):
    pass


def analytic_harmonic_xp(x0: float, p0: float, mass: float, omega: float, gamma: float, t):
    """Damped rotation of ``(X, P / m w)``; returns ``(X_t, P_t)``.

    ``X_t = (X0 cos wt + P0/(m w) sin wt) e^{-gamma t/2}``,
    ``P_t = (P0 cos wt - m w X0 sin wt) e^{-gamma t/2}``.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    t = np.asarray(t, dtype=float)
    damp = np.exp(-0.5 * gamma * t)
    c, s = np.cos(omega * t), np.sin(omega * t)
    x = (x0 * c + p0 / (mass * omega) * s) * damp
    p = (p0 * c - mass * omega * x0 * s) * damp
    return x, p


# --------------------------------------------------------------------------
# Pauli master equation


@dataclass(frozen=True)
class PauliSystem:
    """``rates[i, j]`` is the j -> i transfer rate."""

    energies: NDArray[np.float64]
    rates: NDArray[np.float64]
    populations: NDArray[np.float64]

    def __post_init__(self):
        if np.any(self.rates < 0):
            raise ValueError("rates must be non-negative")
        n = np.asarray(self.populations)
        if np.any(n < -1e-12) or np.any(n > 1 + 1e-12):
            raise ValueError("populations must lie in [0, 1]")


def pauli_rates(grid: Grid, basis: EigenBasis, channels) -> NDArray[np.float64]:
    """``gamma_ij = sum_a |<psi_i| l_a |psi_j>|^2``."""
    if isinstance(channels, LindbladChannel):
        channels = (channels,)
    d = len(basis)
    rates = np.zeros((d, d))
    for ch in channels:
        ell = matrix_elements(grid, basis, lambda phi: ch.apply(grid, phi))
        rates += np.abs(ell) ** 2
    return rates


def pauli_rhs(rates: NDArray, n: NDArray) -> NDArray:
    """``dn_i/dt = sum_j [g_ij n_j (1 - n_i) - g_ji n_i (1 - n_j)]``."""
    gain = (1.0 - n) * (rates @ n)
    loss = n * (rates.T @ (1.0 - n))
    return gain - loss


def pauli_evolve(system: PauliSystem, dt: float, t_final: float, tol: float = 1e-8):
    """Classic RK4 on the output mesh ``0, dt, ..., t_final``.

    Each output interval is subdivided so that ``h * max total rate <= 0.05``.
    Returns ``(times, populations)`` with populations of shape ``(n_times, d)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    rates = np.asarray(system.rates, dtype=float)
    n = np.array(system.populations, dtype=float)
    n_out = int(round(t_final / dt))
    max_rate = max(float(np.max(rates.sum(axis=0) + rates.sum(axis=1))), 1e-300)
    sub = max(1, int(np.ceil(dt * max_rate / 0.05)))
    h = dt / sub
    out = np.empty((n_out + 1, len(n)))
    out[0] = n
    for i in range(n_out):
        for _ in range(sub):
            k1 = pauli_rhs(rates, n)
            k2 = pauli_rhs(rates, n + 0.5 * h * k1)
            k3 = pauli_rhs(rates, n + 0.5 * h * k2)
            k4 = pauli_rhs(rates, n + h * k3)
            n = n + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if np.any(n < -tol) or np.any(n > 1 + tol):
            raise OracleError(f"population left [0, 1] at t = {(i + 1) * dt:g}")
        out[i + 1] = n
    return dt * np.arange(n_out + 1), out


def kinetic_diagonal(grid: Grid, basis: EigenBasis, mass: float) -> NDArray[np.float64]:
    return np.real(np.sum(np.conj(basis.orbitals) * apply_kinetic(grid, mass, basis.orbitals), axis=-1) * grid.dx)


def pauli_observables(populations: NDArray, energies: NDArray, kinetic: NDArray):
    """``H = sum n_i e_i`` and ``T = sum n_i <psi_i|T|psi_i>`` (broadcast over leading axes)."""
    populations = np.asarray(populations, dtype=float)
    return populations @ np.asarray(energies), populations @ np.asarray(kinetic)


def theta_populations(n_states: int, n_particles: int, theta: float) -> NDArray[np.float64]:
    """Eigenstate occupations of ``Phi_theta`` (diagonal part only)."""
    n = np.zeros(n_states)
    n[: n_particles - 1] = 1.0
    n[n_particles - 1] = np.cos(theta) ** 2
    n[n_particles] = np.sin(theta) ** 2
    return n


# --------------------------------------------------------------------------
# dense single-particle Lindblad oracle


@dataclass(frozen=True)
class DenseModel:
    """Single-particle operators in a truncated eigenbasis of dimension ``d``."""

    h: NDArray[np.complex128]
    lindblad: tuple[NDArray[np.complex128], ...]
    observables: Mapping[str, NDArray[np.complex128]]

    @property
    def dim(self) -> int:
        return self.h.shape[0]


def dense_model(grid: Grid, pot: Potential, basis: EigenBasis, channels) -> DenseModel:
    if isinstance(channels, LindbladChannel):
        channels = (channels,)
    d = len(basis)
    if d > DENSE_MAX_DIM:
        raise OracleError(f"dense oracle limited to d <= {DENSE_MAX_DIM}, got {d}")
    h = np.diag(basis.energies).astype(complex)
    ells = tuple(matrix_elements(grid, basis, lambda phi, ch=ch: ch.apply(grid, phi)) for ch in channels)
    obs = {
        "x": matrix_elements(grid, basis, lambda phi: grid.x * phi),
        "p": matrix_elements(grid, basis, lambda phi: apply_momentum(grid, phi)),
        "h": h,
        "t": matrix_elements(grid, basis, lambda phi: apply_kinetic(grid, pot.mass, phi)),
    }
    return DenseModel(h, ells, obs)


def liouvillian(model: DenseModel) -> NDArray[np.complex128]:
    """Superoperator of ``-(i/hbar)[h, rho] + sum l rho l^+ - {l^+ l, rho}/2`` on row-major ``vec(rho)``."""
    d = model.dim
    eye = np.eye(d)
    sup = -1j / HBAR * (np.kron(model.h, eye) - np.kron(eye, model.h.T))
    for ell in model.lindblad:
        ldl = ell.conj().T @ ell
        sup += np.kron(ell, ell.conj()) - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T))
    return sup


def exact_lindblad_dense(model: DenseModel, rho0: NDArray, dt: float, t_final: float, h: float = 1e-3):
    """Integrate the single-particle Lindblad equation with classic RK4 at step ``h``.

    Returns ``(times, rhos)`` on the output mesh ``0, dt, ..., t_final``.
    """
    d = model.dim
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (d, d):
        raise ValueError(f"rho0 must be {d}x{d}")
    if abs(np.trace(rho0) - 1) > 1e-10:
        raise OracleError("rho0 must have unit trace")
    sub = max(1, int(round(dt / h)))
    h = dt / sub
    lh = h * liouvillian(model)
    eye = np.eye(d * d)
    # RK4 applied to a linear system is this degree-4 Taylor polynomial
    step = eye + lh @ (eye + lh @ (eye / 2 + lh @ (eye / 6 + lh / 24)))
    block = np.linalg.matrix_power(step, sub)
    n_out = int(round(t_final / dt))
    rhos = np.empty((n_out + 1, d, d), dtype=complex)
    v = rho0.reshape(-1)
    rhos[0] = rho0
    for i in range(n_out):
        v = block @ v
        rho = v.reshape(d, d)
        if abs(np.trace(rho) - 1) > 1e-10:
            raise OracleError(f"trace drifted to {np.trace(rho)} at t = {(i + 1) * dt:g}")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise OracleError("density matrix lost Hermiticity")
        if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] < -1e-8:
            raise OracleError("density matrix lost positivity")
        rhos[i + 1] = rho
    return dt * np.arange(n_out + 1), rhos


def expectation(rhos: NDArray, op: NDArray) -> NDArray[np.float64]:
    """``tr(rho op)`` along the leading axis (real part)."""
    return np.real(np.einsum("tij,ji->t", rhos, op))
