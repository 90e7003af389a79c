"""Hilbert-space (reduced-rank) Gaussian-process approximation in one dimension.

The kernel is expanded in the Dirichlet-Laplacian eigenfunctions of the
interval ``[-L, L]`` and weighted by the Matérn-5/2 spectral density.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# 2 sqrt(pi) Gamma(3) 5^(5/2) / Gamma(5/2), with Gamma(5/2) = (3/4) sqrt(pi)
MATERN52_CONST = 2.0 * math.sqrt(math.pi) * 2.0 * 5.0 ** 2.5 / (0.75 * math.sqrt(math.pi))
_HALF_LOG_CONST = 0.5 * math.log(MATERN52_CONST)


@dataclass(frozen=True)
class SpectralScale:
    lengthscale: float
    amplitude: float

    def __post_init__(self):
        for name in ("lengthscale", "amplitude"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True, eq=False)
class HsgpBasis:
    """Precomputed eigenbasis for one input column.

    Attributes
    ----------
    num_basis : int
        Number of eigenfunctions ``B``.
    boundary_factor : float
        Multiplier ``c`` applied to the largest centered input.
    center : float
        Midpoint of the observed input range.
    half_width : float
        ``L = c * max|x - center|``.
    centered_inputs : np.ndarray
        Inputs minus ``center``.
    eigvals : np.ndarray
        ``(j pi / 2L)^2`` for ``j = 1..B``.
    phi : np.ndarray
        ``N x B`` matrix of eigenfunctions at the inputs.
    """

    num_basis: int
    boundary_factor: float
    center: float
    half_width: float
    centered_inputs: np.ndarray
    eigvals: np.ndarray
    phi: np.ndarray

    @property
    def sqrt_eigvals(self) -> np.ndarray:
        return np.sqrt(self.eigvals)

    def in_domain(self, x) -> np.ndarray:
        return np.abs(np.asarray(x, dtype=float) - self.center) <= self.half_width

    def design(self, x) -> np.ndarray:
        """Eigenfunction matrix at new (uncentered) inputs."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        outside = ~self.in_domain(x)
        if outside.any():
            bad = x[outside][0]
            raise ValueError(
                f"input {bad!r} lies outside the approximation domain "
                f"[{self.center - self.half_width}, {self.center + self.half_width}]")
        return eigenfunctions(x - self.center, self.half_width, self.num_basis)


def laplacian_eigen(j: int, L: float) -> tuple[float, Callable[[np.ndarray], np.ndarray]]:
    """Eigenvalue and eigenfunction ``j`` of the Dirichlet Laplacian on ``[-L, L]``."""
    if int(j) != j or j < 1:
        raise ValueError(f"eigen index must be a positive integer, got {j}")
    if not L > 0:
        raise ValueError(f"half-width must be positive, got {L}")
    lam = (j * math.pi / (2.0 * L)) ** 2
    root = math.sqrt(lam)
    scale = math.sqrt(1.0 / L)

    def phi(x):
        return scale * np.sin(root * (np.asarray(x, dtype=float) + L))

    return lam, phi


def eigenfunctions(centered: np.ndarray, L: float, num_basis: int) -> np.ndarray:
    j = np.arange(1, num_basis + 1)
    root = j * math.pi / (2.0 * L)
    return math.sqrt(1.0 / L) * np.sin(np.outer(np.asarray(centered, dtype=float) + L, root))


def matern52_spectral_density(sqrt_lambda, lengthscale):
    """Matérn-5/2 spectral density at frequency ``sqrt_lambda`` (unit amplitude)."""
    ell = np.asarray(lengthscale, dtype=float)
    if np.any(~(ell > 0)):
        raise ValueError("lengthscale must be positive")
    w = np.asarray(sqrt_lambda, dtype=float)
    out = MATERN52_CONST / ell ** 5 * (5.0 / ell ** 2 + w * w) ** -3
    return out if out.ndim else float(out)


def log_sqrt_spectral_density(sqrt_lambda, lengthscale):
    """``0.5 * log s(w | l)``, stable for large lengthscales."""
    ell = np.asarray(lengthscale, dtype=float)
    w = np.asarray(sqrt_lambda, dtype=float)
    return _HALF_LOG_CONST - 2.5 * np.log(ell) - 1.5 * np.log(5.0 / ell ** 2 + w * w)


def dlog_sqrt_density_dlog_lengthscale(sqrt_lambda, lengthscale):
    ell = np.asarray(lengthscale, dtype=float)
    w = np.asarray(sqrt_lambda, dtype=float)
    return -2.5 + 15.0 / (5.0 + (ell * w) ** 2)


def build_basis(inputs, num_basis: int = 120, boundary_factor: float = 2.5) -> HsgpBasis:
    x = np.asarray(inputs, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("inputs must be non-empty")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    if num_basis < 1:
        raise ValueError("num_basis must be positive")
    if not boundary_factor > 0:
        raise ValueError("boundary_factor must be positive")
    center = 0.5 * (x.min() + x.max())
    centered = x - center
    spread = np.abs(centered).max()
    if spread == 0:
        raise ValueError("all inputs are identical; the approximation domain has zero width")
    L = boundary_factor * spread
    j = np.arange(1, num_basis + 1)
    return HsgpBasis(
        num_basis=int(num_basis),
        boundary_factor=float(boundary_factor),
        center=float(center),
        half_width=float(L),
        centered_inputs=centered,
        eigvals=(j * math.pi / (2.0 * L)) ** 2,
        phi=eigenfunctions(centered, L, num_basis),
    )


def spectral_weights(basis: HsgpBasis, scales: Sequence[SpectralScale]) -> np.ndarray:
    """Per-basis weight ``sum_t amp_t * sqrt(s(sqrt(lambda_b) | l_t))``."""
    if not scales:
        raise ValueError("at least one spectral scale is required")
    w = basis.sqrt_eigvals
    return sum(s.amplitude * np.exp(log_sqrt_spectral_density(w, s.lengthscale)) for s in scales)


def hsgp_evaluate(basis: HsgpBasis, scales: Sequence[SpectralScale], coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.num_basis,):
        raise ValueError(f"expected {basis.num_basis} coefficients, got shape {coeffs.shape}")
    return basis.phi @ (spectral_weights(basis, scales) * coeffs)

