"""Short-time non-unitary propagation of orbitals.

One step applies ``exp(A)`` to every orbital, where the one-body exponent

    A = -(i/hbar) [h dt - i (dh_R + dh_C + dh_S)]

splits into a part diagonal on the grid, a part diagonal in momentum space
and a scalar. With ``kappa`` the drift coefficient built from ``<L>``::

    dh_R = -hbar (kappa dt + dw + i du) R
    dh_S = -hbar (kappa dt + dw + dv) i S
    dh_C =  hbar C dt

Three interchangeable ways of applying ``exp(A)`` are provided: a Newton
interpolating polynomial at Leja points (the production path), a symmetric
split-operator product, and a dense matrix exponential used as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .grid import HBAR, Grid, apply_k_diagonal, from_momentum, kinetic_multiplier, to_momentum
from .operators import LindbladChannel, Potential
from .state import TrajectoryAbort

DEFAULT_TOL = 1e-9
MAX_DEGREE = 128
# capacity of the scaled spectral region handled by one Newton polynomial
CAPACITY_PER_SUBSTEP = 48.0
CAPACITY_RATIO = 1.1
DENSE_MAX_POINTS = 256
N_CANDIDATES = 2048


class PropagatorError(TrajectoryAbort):
    pass


@dataclass(frozen=True)
class NoiseIncrement:
    """Wiener increments for one step.

    ``dw`` has shape ``(n_channels,)`` and is complex with ``E|dw|^2 = dt`` and
    ``E[dw^2] = 0``. ``du`` and ``dv`` are real with variance ``dt`` and shape
    ``(..., n_channels)``; leading axes index Hubbard-Stratonovich samples.
    """

    dw: NDArray[np.complex128]
    du: NDArray[np.float64]
    dv: NDArray[np.float64]

    @classmethod
    def zeros(cls, n_channels: int = 1, n_samples: int | None = None) -> "NoiseIncrement":
        shape = (n_channels,) if n_samples is None else (n_samples, n_channels)
        return cls(np.zeros(n_channels, complex), np.zeros(shape), np.zeros(shape))


@dataclass(frozen=True)
class StepGenerator:
    """``A = diag_x(position_diag) + F^-1 diag_k(momentum_diag) F + scalar``.

    Arrays may carry leading batch axes (one entry per HS sample) that
    broadcast against the orbitals' leading axes.
    """

    dt: float
    position_diag: NDArray[np.complex128]
    momentum_diag: NDArray[np.complex128]
    scalar: NDArray[np.complex128]

    def apply(self, grid: Grid, phi: NDArray) -> NDArray:
        return (
            self.position_diag * phi
            + apply_k_diagonal(grid, self.momentum_diag, phi)
            + self.scalar[..., None] * phi
        )

    def scaled(self, factor: float) -> "StepGenerator":
        return StepGenerator(
            self.dt * factor,
            self.position_diag * factor,
            self.momentum_diag * factor,
            self.scalar * factor,
        )

    def spectral_box(self) -> tuple[float, float, float, float]:
        """Rectangle ``(re_min, re_max, im_min, im_max)`` containing the numerical range.

        The numerical range of a sum lies in the Minkowski sum of the ranges;
        each diagonal piece has the convex hull of its entries as its range.
        """
        pd, md, sc = self.position_diag, self.momentum_diag, self.scalar
        re_lo = np.min(pd.real) + np.min(md.real) + np.min(sc.real)
        re_hi = np.max(pd.real) + np.max(md.real) + np.max(sc.real)
        im_lo = np.min(pd.imag) + np.min(md.imag) + np.min(sc.imag)
        im_hi = np.max(pd.imag) + np.max(md.imag) + np.max(sc.imag)
        return float(re_lo), float(re_hi), float(im_lo), float(im_hi)

    def matrix(self, grid: Grid, index: tuple = ()) -> NDArray[np.complex128]:
        pd = np.broadcast_to(self.position_diag, self.position_diag.shape)[index]
        md = np.broadcast_to(self.momentum_diag, self.momentum_diag.shape)[index]
        sc = np.asarray(self.scalar)[index]
        pd = np.reshape(pd, (-1,))
        md = np.reshape(md, (-1,))
        eye = np.eye(grid.n_points, dtype=complex)
        kpart = apply_k_diagonal(grid, md, eye.T).T
        return np.diag(pd) + kpart + complex(np.reshape(sc, ())) * eye


def drift_coefficient(l_expect: complex, convention: str = "complex") -> complex:
    """``conj(<L>)`` for the complex-noise unraveling, ``Re<L>`` for the real-part form."""
    if convention == "complex":
        return complex(np.conj(l_expect))
    if convention == "real":
        return complex(np.real(l_expect))
    raise ValueError(f"unknown <L> convention {convention!r}")


def build_generator(
    grid: Grid,
    pot: Potential,
    channels: Sequence[LindbladChannel],
    l_expect: Sequence[complex],
    dt: float,
    noise: NoiseIncrement | None = None,
    convention: str = "complex",
) -> StepGenerator:
    """Assemble the one-body exponent for one step.

    With HS-batched noise (``du`` of shape ``(K, n_channels)``) the result
    carries a leading axis of length ``K`` and a singleton axis so that it
    broadcasts against ``(K, N, Ng)`` orbital stacks.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    channels = list(channels)
    if noise is None:
        noise = NoiseIncrement.zeros(max(len(channels), 1))
    du = np.asarray(noise.du, dtype=float)
    dv = np.asarray(noise.dv, dtype=float)
    batch = du.shape[:-1]
    pd = np.broadcast_to(-1j * pot.values(grid) * dt / HBAR, batch + (grid.n_points,)).astype(complex)
    md = np.broadcast_to(
        -1j * kinetic_multiplier(grid, pot.mass) * dt / HBAR, batch + (grid.n_points,)
    ).astype(complex)
    scalar = np.zeros(batch, dtype=complex)
    for a, ch in enumerate(channels):
        kappa = drift_coefficient(l_expect[a], convention)
        dw = complex(noise.dw[a])
        coef_r = kappa * dt + dw + 1j * du[..., a]
        coef_s = kappa * dt + dw + dv[..., a]
        pd = pd + coef_r[..., None] * ch.r_values(grid)
        md = md + 1j * coef_s[..., None] * ch.s_multiplier(grid)
        scalar = scalar - ch.scalar * dt
    if batch:
        pd, md, scalar = pd[..., None, :], md[..., None, :], scalar[..., None]
    return StepGenerator(float(dt), pd, md, scalar)


# --------------------------------------------------------------------------
# Newton interpolation at Leja points


def _quantize_up(value: float, step: float) -> float:
    return step * np.ceil(value / step - 1e-12)


@lru_cache(maxsize=256)
def leja_points(half_re: float, half_im: float, n_points: int = MAX_DEGREE + 1) -> NDArray[np.complex128]:
    """Leja sequence on the boundary of ``[-half_re, half_re] x [-half_im, half_im]``."""
    t = np.linspace(0.0, 1.0, N_CANDIDATES // 4, endpoint=False)
    a, b = half_re, half_im
    cand = np.concatenate(
        [
            a * (1 - 2 * t) + 1j * b,
            -a + 1j * b * (1 - 2 * t),
            -a * (1 - 2 * t) - 1j * b,
            a - 1j * b * (1 - 2 * t),
        ]
    )
    cand = np.unique(np.round(cand, 14))
    pts = np.empty(n_points, dtype=complex)
    pts[0] = cand[np.argmax(np.abs(cand))]
    logprod = np.log(np.abs(cand - pts[0]) + 1e-300)
    for j in range(1, n_points):
        i = int(np.argmax(logprod))
        pts[j] = cand[i]
        logprod = logprod + np.log(np.abs(cand - pts[j]) + 1e-300)
        logprod[i] = -np.inf
    return pts


@lru_cache(maxsize=1024)
def _newton_coefficients(half_re: float, half_im: float, capacity: float) -> NDArray[np.complex128]:
    """Divided differences of ``exp(capacity * z)`` at the Leja points.

    Opitz: they form the first column of ``exp(capacity * Z)`` for the lower
    bidiagonal ``Z`` with the points on its diagonal and ones below it.
    """
    z = leja_points(half_re, half_im)
    zmat = np.diag(z) + np.diag(np.ones(len(z) - 1), -1)
    return scipy.linalg.expm(capacity * zmat)[:, 0]


def _region(gen: StepGenerator) -> tuple[complex, float, float, float]:
    """Center, capacity and scaled half-widths of the (quantized) spectral box."""
    re_lo, re_hi, im_lo, im_hi = gen.spectral_box()
    center = 0.5 * (re_lo + re_hi) + 0.5j * (im_lo + im_hi)
    hw, hh = 0.5 * (re_hi - re_lo), 0.5 * (im_hi - im_lo)
    # enclosing ellipse of the rectangle has capacity (hw + hh) / sqrt(2)
    # coarse geometric grid so the cached coefficients are reused across noisy steps
    raw = max((hw + hh) / np.sqrt(2.0), 0.25)
    capacity = float(CAPACITY_RATIO ** np.ceil(np.log(raw) / np.log(CAPACITY_RATIO) - 1e-12))
    a = _quantize_up(hw / capacity, 1 / 16)
    b = _quantize_up(hh / capacity, 1 / 16)
    return center, capacity, a, b


def apply_exp_newton(
    grid: Grid,
    gen: StepGenerator,
    phi: NDArray,
    tol: float = DEFAULT_TOL,
    max_degree: int = MAX_DEGREE,
) -> NDArray:
    """``exp(A) phi`` by Newton interpolation of the exponential at Leja points.

    The exponent is split into equal substeps when the spectral region is too
    large for a polynomial of ``max_degree``.
    """
    grid.check(phi)
    re_lo, re_hi, im_lo, im_hi = gen.spectral_box()
    extent = (0.5 * (re_hi - re_lo) + 0.5 * (im_hi - im_lo)) / np.sqrt(2.0)
    n_sub = max(1, int(np.ceil(extent / CAPACITY_PER_SUBSTEP)))
    sub = gen.scaled(1.0 / n_sub) if n_sub > 1 else gen
    out = phi
    for _ in range(n_sub):
        out = _newton_once(grid, sub, out, tol, max_degree)
    return out


def _newton_once(grid: Grid, gen: StepGenerator, phi: NDArray, tol: float, max_degree: int) -> NDArray:
    center, capacity, a, b = _region(gen)
    z = leja_points(a, b)
    coeffs = _newton_coefficients(a, b, capacity)
    # fold the scalar part into the position diagonal; the Leja shift goes in per term
    pos = (gen.position_diag + gen.scalar[..., None] - center) / capacity
    mom = gen.momentum_diag / capacity
    phi_norm = np.linalg.norm(phi)
    if phi_norm == 0:
        return np.zeros(np.broadcast_shapes(phi.shape, gen.position_diag.shape), dtype=complex)
    shape = np.broadcast_shapes(phi.shape, pos.shape)
    w = np.array(np.broadcast_to(phi, shape), dtype=complex)
    result = coeffs[0] * w
    small = 0
    for j in range(1, min(max_degree, len(z) - 1) + 1):
        w = (pos - z[j - 1]) * w + np.fft.ifft(mom * np.fft.fft(w))
        result += coeffs[j] * w
        if abs(coeffs[j]) * np.linalg.norm(w) < tol * phi_norm:
            small += 1
            if small >= 2:
                return np.exp(center) * result
        else:
            small = 0
    raise PropagatorError(
        f"Newton propagator did not converge at degree {max_degree} (capacity {capacity:.2f})"
    )


# --------------------------------------------------------------------------
# split operator and dense oracle


def apply_exp_split(grid: Grid, gen: StepGenerator, phi: NDArray) -> NDArray:
    """Symmetric splitting ``e^{X/2} e^{K} e^{X/2}``; each factor is an exact diagonal exponential."""
    grid.check(phi)
    half = np.exp(0.5 * gen.position_diag)
    out = half * phi
    out = from_momentum(np.exp(gen.momentum_diag) * to_momentum(out))
    return np.exp(gen.scalar)[..., None] * half * out


def apply_exp_dense(grid: Grid, gen: StepGenerator, phi: NDArray) -> NDArray:
    """Reference ``exp(A) phi`` from the materialized ``Ng x Ng`` matrix (scaling and squaring)."""
    grid.check(phi)
    if grid.n_points > DENSE_MAX_POINTS:
        raise ValueError(f"dense propagator limited to {DENSE_MAX_POINTS} points")
    batch = np.broadcast_shapes(gen.position_diag.shape[:-1], gen.momentum_diag.shape[:-1], gen.scalar.shape)
    if not batch:
        return (scipy.linalg.expm(gen.matrix(grid)) @ np.asarray(phi).T).T
    # batch axes of the generator end in a singleton that broadcasts over orbitals
    out_shape = np.broadcast_shapes(batch + (grid.n_points,), np.shape(phi))
    out = np.empty(out_shape, dtype=complex)
    lead = batch[:-1]
    for idx in np.ndindex(*lead):
        u = scipy.linalg.expm(gen.matrix(grid, idx + (0,)))
        block = np.broadcast_to(phi, out_shape)[idx]
        out[idx] = (u @ block.T).T
    return out


PROPAGATORS = {
    "newton": apply_exp_newton,
    "split": lambda grid, gen, phi, tol=None: apply_exp_split(grid, gen, phi),
    "dense": lambda grid, gen, phi, tol=None: apply_exp_dense(grid, gen, phi),
}


def propagate(grid: Grid, gen: StepGenerator, phi: NDArray, method: str = "newton", tol: float = DEFAULT_TOL) -> NDArray:
    if method not in PROPAGATORS:
        raise ValueError(f"unknown propagator {method!r}")
    if method == "newton":
        return apply_exp_newton(grid, gen, phi, tol=tol)
    return PROPAGATORS[method](grid, gen, phi)
