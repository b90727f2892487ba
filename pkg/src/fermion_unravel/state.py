"""Slater-determinant algebra: orthonormalization, one-body density matrices,
sample combination, natural-orbital collapse and observables.

A determinant is stored as an ``(N, Ng)`` array of orbital rows. Only the
span of the rows matters physically; amplitudes and phases of individual
rows are bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .grid import Grid, apply_kinetic, apply_momentum, inner
from .operators import EigenBasis, LindbladChannel, Potential, fix_phase

GRAM_COND_MAX = 1e12
RANK_TOL = 1e-12
TIE_TOL = 1e-10


class TrajectoryAbort(RuntimeError):
    """A trajectory cannot continue (singular overlap, propagator failure)."""


class GramError(TrajectoryAbort):
    pass


@dataclass(frozen=True)
class SlaterState:
    grid: Grid
    orbitals: NDArray[np.complex128]

    def __post_init__(self):
        orbitals = np.atleast_2d(np.asarray(self.orbitals, dtype=complex))
        if orbitals.shape[0] < 1:
            raise ValueError("a Slater state needs at least one orbital")
        self.grid.check(orbitals)
        object.__setattr__(self, "orbitals", orbitals)

    @property
    def n_particles(self) -> int:
        return self.orbitals.shape[0]

    def overlap(self) -> NDArray[np.complex128]:
        return overlap_matrix(self.grid, self.orbitals, self.orbitals)


@dataclass(frozen=True)
class OneBodyDM:
    """Spectral form ``rho_1 = sum_n w_n |phi_n><phi_n|`` with descending ``w``."""

    grid: Grid
    natural_orbitals: NDArray[np.complex128]
    occupations: NDArray[np.float64]

    @property
    def rank(self) -> int:
        return len(self.occupations)

    @property
    def trace(self) -> float:
        return float(np.sum(self.occupations))

    def matrix(self) -> NDArray[np.complex128]:
        """Dense kernel ``rho(x_i, x_j)``; for tests and small grids."""
        v = self.natural_orbitals
        return (v.T * self.occupations) @ np.conj(v)


@dataclass(frozen=True)
class Observables:
    X: float
    P: float
    H: float
    T: float
    L_expect: tuple[complex, ...] = ()


def overlap_matrix(grid: Grid, a: NDArray, b: NDArray) -> NDArray[np.complex128]:
    """``S_ij = <a_i|b_j>`` for row-stacked orbitals."""
    return np.conj(a) @ b.T * grid.dx


def init_theta_state(grid: Grid, basis: EigenBasis, n_particles: int, theta: float) -> SlaterState:
    """Lowest ``N-1`` orbitals plus ``cos(theta) HOMO + sin(theta) LUMO``."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    if len(basis) < n_particles + 1:
        raise ValueError(f"need {n_particles + 1} eigenstates, basis has {len(basis)}")
    psi = basis.orbitals
    mixed = np.cos(theta) * psi[n_particles - 1] + np.sin(theta) * psi[n_particles]
    return SlaterState(grid, np.vstack([psi[: n_particles - 1], mixed[None, :]]))


def lowdin(grid: Grid, orbitals: NDArray) -> tuple[NDArray[np.complex128], float]:
    """Symmetric orthonormalization of the rows.

    Returns the orthonormal rows and ``log sqrt(det S)``: the determinant built
    from the input rows is ``sqrt(det S)`` times the one built from the output.
    """
    s = overlap_matrix(grid, orbitals, orbitals)
    s = 0.5 * (s + s.conj().T)
    evals, evecs = np.linalg.eigh(s)
    if evals[0] <= 0 or evals[-1] / evals[0] > GRAM_COND_MAX:
        raise GramError(
            f"near-singular overlap (eigenvalues {evals[0]:.3e}..{evals[-1]:.3e}); "
            "time step likely too large"
        )
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.conj().T
    # phi'_j = sum_i phi_i (S^-1/2)_ij
    return inv_sqrt.T @ orbitals, float(0.5 * np.sum(np.log(evals)))


def orthonormalize(s: SlaterState) -> SlaterState:
    return SlaterState(s.grid, lowdin(s.grid, s.orbitals)[0])


def one_body_dm(s: SlaterState) -> OneBodyDM:
    return OneBodyDM(s.grid, s.orbitals.copy(), np.ones(s.n_particles))


def _spectral_from_rows(grid: Grid, rows: NDArray) -> OneBodyDM:
    """Diagonalize ``sum_m |b_m><b_m|`` through the Gram matrix of the rows ``b_m``."""
    gram = overlap_matrix(grid, rows, rows)
    gram = 0.5 * (gram + gram.conj().T)
    lam, u = np.linalg.eigh(gram)
    order = np.argsort(lam)[::-1]
    lam, u = lam[order], u[:, order]
    keep = lam > RANK_TOL * max(lam[0], 1.0)
    lam, u = lam[keep], u[:, keep]
    natural = (u.T @ rows) / np.sqrt(lam)[:, None]
    return OneBodyDM(grid, natural, lam)


def average_dms(dms: Sequence[OneBodyDM], weights: Sequence[float] | None = None) -> OneBodyDM:
    """Weighted mean of one-body density matrices (equal weights by default)."""
    if not dms:
        raise ValueError("average_dms needs at least one density matrix")
    grid = dms[0].grid
    if weights is None:
        weights = np.full(len(dms), 1.0 / len(dms))
    weights = np.asarray(weights, dtype=float)
    rows = np.vstack(
        [np.sqrt(w * dm.occupations)[:, None] * dm.natural_orbitals for w, dm in zip(weights, dms)]
    )
    return _spectral_from_rows(grid, rows)


def average_projectors(grid: Grid, samples: NDArray) -> OneBodyDM:
    """Equal-weight mean of the projectors of ``K`` orthonormal determinants, shape ``(K, N, Ng)``."""
    k = samples.shape[0]
    return _spectral_from_rows(grid, samples.reshape(-1, samples.shape[-1]) / np.sqrt(k))


def _adjugate_svd(m: NDArray) -> NDArray:
    u, s, vh = np.linalg.svd(m)
    n = s.shape[-1]
    cof = np.empty_like(s)
    for i in range(n):
        cof[..., i] = np.prod(np.delete(s, i, axis=-1), axis=-1)
    phase = np.linalg.det(u) * np.linalg.det(vh)
    return phase[..., None, None] * (np.conj(np.swapaxes(vh, -1, -2)) * cof[..., None, :]) @ np.conj(
        np.swapaxes(u, -1, -2)
    )


def _adjugate(m: NDArray, det: NDArray | None = None) -> NDArray:
    """Batched ``det(M) M^-1``, finite for singular ``M``.

    Uses the inverse where ``M`` is comfortably invertible and an SVD
    cofactor formula for the (rare) near-singular blocks.
    """
    det = np.linalg.det(m) if det is None else det
    scale = np.max(np.abs(m), axis=(-2, -1)) ** m.shape[-1]
    bad = ~(np.abs(det) > 1e-8 * scale)
    adj = np.empty_like(m)
    good = ~bad
    if np.any(good):
        adj[good] = det[good][..., None, None] * np.linalg.inv(m[good])
    if np.any(bad):
        adj[bad] = _adjugate_svd(m[bad])
    return adj


def superposition_dm(grid: Grid, samples: NDArray, amplitudes: NDArray) -> OneBodyDM:
    """One-body density matrix of ``sum_k a_k det[samples[k]]``.

    Each ``samples[k]`` is an orthonormal ``(N, Ng)`` block. Uses the
    nonorthogonal-determinant (generalized Wick) contraction
    ``rho = sum_kl conj(a_l) a_k |b_k> adj(O_lk) <b_l| / Z`` with
    ``O_lk = <b_l|b_k>``, evaluated in the joint span.
    """
    k, n, ng = samples.shape
    rows = samples.reshape(k * n, ng)
    # orthonormal basis of the joint span and the coordinates of every row in it
    u, sv, vh = np.linalg.svd(rows, full_matrices=False)
    keep = sv > np.sqrt(RANK_TOL) * max(sv[0], 1.0)
    basis = vh[keep] / np.sqrt(grid.dx)
    coeffs = (u[:, keep] * (sv[keep] * np.sqrt(grid.dx))).T  # (q, K*N), columns are rows
    gram = np.conj(coeffs.T) @ coeffs
    o = gram.reshape(k, n, k, n).transpose(0, 2, 1, 3)  # o[l, k] = <b_l|b_k>
    det = np.linalg.det(o)
    adj = _adjugate(o, det)  # (K_l, K_k, N, N)
    weight = np.conj(amplitudes)[:, None] * amplitudes[None, :]
    z = np.sum(weight * det)
    # M = sum_kl w_lk C_k adj(O_lk) C_l^dag, as two dense products
    wadj = (weight[:, :, None, None] * adj).transpose(1, 2, 0, 3).reshape(k * n, k * n)  # [(k,i), (l,j)]
    tmp = coeffs @ wadj  # (q, (l, j))
    m = tmp @ np.conj(coeffs.T) / z
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    return OneBodyDM(grid, v.T @ basis, w)


def collapse_to_slater(
    dm: OneBodyDM, n_particles: int, previous: SlaterState | None = None
) -> SlaterState:
    """Determinant of the ``N`` most occupied natural orbitals.

    Near-degenerate occupations straddling the cut are resolved in favour of
    the orbital with the larger weight in ``previous``; remaining ties keep
    the order of the spectral decomposition.
    """
    occ = dm.occupations
    if np.count_nonzero(occ > RANK_TOL) < n_particles:
        raise TrajectoryAbort(f"density matrix rank below {n_particles}")
    chosen = list(range(n_particles))
    cut = occ[n_particles - 1]
    tied = np.flatnonzero(np.abs(occ - cut) <= TIE_TOL)
    if previous is not None and len(tied) > 1 and tied[-1] >= n_particles:
        ov = overlap_matrix(dm.grid, previous.orbitals, dm.natural_orbitals[tied])
        score = np.sum(np.abs(ov) ** 2, axis=0)
        n_take = n_particles - int(tied[0])
        ranked = tied[np.argsort(-score, kind="stable")][:n_take]
        chosen = list(range(int(tied[0]))) + sorted(int(i) for i in ranked)
    orbitals = fix_phase(dm.natural_orbitals[chosen])
    return SlaterState(dm.grid, orbitals)


def observables(
    s: SlaterState, pot: Potential, channels: Sequence[LindbladChannel] = ()
) -> Observables:
    """Total displacement, momentum, energy, kinetic energy and channel expectations."""
    g, phi = s.grid, s.orbitals
    x_val = np.sum(inner(g, phi, g.x * phi))
    p_val = np.sum(inner(g, phi, apply_momentum(g, phi)))
    t_val = np.sum(inner(g, phi, apply_kinetic(g, pot.mass, phi)))
    v_val = np.sum(inner(g, phi, pot.values(g) * phi))
    scale = max(1.0, abs(t_val) + abs(v_val))
    for name, val in (("X", x_val), ("P", p_val), ("T", t_val)):
        if abs(np.imag(val)) > 1e-8 * scale:
            raise ArithmeticError(f"{name} expectation has imaginary part {np.imag(val):.2e}")
    ells = tuple(complex(np.sum(inner(g, phi, ch.apply(g, phi)))) for ch in channels)
    return Observables(
        X=float(np.real(x_val)),
        P=float(np.real(p_val)),
        H=float(np.real(t_val + v_val)),
        T=float(np.real(t_val)),
        L_expect=ells,
    )


def lindblad_expectation(s: SlaterState, channel: LindbladChannel) -> complex:
    """``<L> = sum_n <phi_n| l |phi_n>`` for orthonormal rows."""
    return complex(np.sum(inner(s.grid, s.orbitals, channel.apply(s.grid, s.orbitals))))
