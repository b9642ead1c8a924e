"""Uniform periodic grids with spectral transforms and quadrature.

The domain is the box [-half_width, half_width)^d with n points per axis,
so dx = 2*half_width/n and the grid nodes are x_j = -half_width + j*dx.
Wavenumbers follow the standard FFT index ordering j in {0, 1, ..., n/2-1,
-n/2, ..., -1} with k_j = pi*j/half_width, which is what the unnormalized
numpy transforms expect.  Quadrature is the periodic trapezoid rule
dx^d * sum(samples): exact for trigonometric polynomials below Nyquist and
spectrally accurate for smooth decaying data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable periodic grid in dimension d in {1, 2}.

    Attributes:
        d: spatial dimension.
        n: points per axis (power of two).
        half_width: box half-length, domain is [-half_width, half_width)^d.
        dx: node spacing, 2*half_width/n exactly.
        axes: per-axis node coordinates, each of shape (n,).
        wavenumbers: per-axis spectral table k_j = pi*j/half_width in FFT order.
        k_sq: |k|^2 on the full d-dimensional spectral grid.
        k_quad: |k|^4 on the full d-dimensional spectral grid (the fourth-order
            symbol used by every bilaplacian evaluation).
    """

    d: int
    n: int
    half_width: float
    dx: float
    axes: tuple = field(repr=False)
    wavenumbers: tuple = field(repr=False)
    k_sq: np.ndarray = field(repr=False)
    k_quad: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def k_max(self) -> float:
        """Magnitude of the per-axis Nyquist wavenumber."""
        return np.pi * (self.n // 2) / self.half_width

    def forward(self, values: np.ndarray) -> np.ndarray:
        """Forward spectral transform (unnormalized, complex output)."""
        return np.fft.fftn(values)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        """Inverse spectral transform back to real nodal values."""
        return np.fft.ifftn(coeffs).real

    def meshes(self) -> tuple:
        """Nodal coordinate arrays broadcast to the full grid shape."""
        return np.meshgrid(*self.axes, indexing="ij")


def make_grid(d: int, n: int, half_width: float) -> Grid:
    """Build a periodic grid.

    Args:
        d: spatial dimension, 1 or 2.
        n: points per axis; must be a power of two and at least 8.
        half_width: box half-length (> 0).

    Returns:
        A fully populated immutable Grid.

    Raises:
        ValueError: on d outside {1, 2}, non-power-of-two or too-small n,
            or nonpositive half_width.
    """
    if d not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {d}")
    if not isinstance(n, (int, np.integer)) or n < 8 or not _is_power_of_two(int(n)):
        raise ValueError(f"n must be a power of two >= 8, got {n}")
    if not half_width > 0:
        raise ValueError(f"half_width must be positive, got {half_width}")

    n = int(n)
    half_width = float(half_width)
    dx = 2.0 * half_width / n
    x = -half_width + dx * np.arange(n)
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=dx)  # equals pi*j/half_width, FFT order

    axes = tuple(x.copy() for _ in range(d))
    tables = tuple(k.copy() for _ in range(d))
    if d == 1:
        k_sq = k**2
    else:
        k_sq = k[:, None] ** 2 + k[None, :] ** 2
    k_quad = k_sq**2
    for arr in (*axes, *tables, k_sq, k_quad):
        arr.setflags(write=False)
    return Grid(d=d, n=n, half_width=half_width, dx=dx, axes=axes,
                wavenumbers=tables, k_sq=k_sq, k_quad=k_quad)


def quadrature(g: Grid, samples: np.ndarray) -> float:
    """Periodic trapezoid quadrature: dx^d * sum(samples)."""
    samples = np.asarray(samples)
    if samples.shape != g.shape:
        raise ValueError(f"samples shape {samples.shape} does not match grid {g.shape}")
    return float(g.dx**g.d * samples.sum())
