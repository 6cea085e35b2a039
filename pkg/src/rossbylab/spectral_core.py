"""Grids, parity-aware transforms and spectral operators on the slab surrogate.

The horizontal plane is replaced by a doubly periodic square of side ``L``;
the vertical interval (0, 1) is sampled at ``nz`` cell centres and expanded
in cosine series (even fields) or sine series (odd fields) with vertical
wavenumbers ``k = kappa * pi``.  Coefficients are stored on a common
``(nx, ny, nz)`` layout indexed by ``(j1, j2, kappa)`` so that an even field
and an odd field with the same index describe the same vertical mode.

Coefficient normalisation: a field is reconstructed as

    f(x) = sum_{xi, kappa} c[xi, kappa] * exp(i xi . x_h) * phi_kappa(x3)

with ``phi_kappa = cos(kappa pi x3)`` (even) or ``sin(kappa pi x3)`` (odd).
For odd fields the slot ``kappa = 0`` is identically zero and the sine mode
``kappa = nz`` (the vertical Nyquist mode) is not represented.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

EVEN = "even"
ODD = "odd"
PARITIES = (EVEN, ODD)


class GridError(ValueError):
    """Invalid grid dimensions."""


class ShapeMismatchError(ValueError):
    """Field does not match the grid it claims to live on."""


class SingularInversionError(ValueError):
    """Helmholtz problem with omega = 0 and a right-hand side of nonzero mean."""


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ROSSBYLAB_THREADS", "1")))
    except ValueError:
        return 1


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Tensor grid: periodic square of side ``L`` times the unit interval."""

    nx: int
    ny: int
    nz: int
    L: float
    kx: np.ndarray = field(repr=False, compare=False)
    ky: np.ndarray = field(repr=False, compare=False)
    kz: np.ndarray = field(repr=False, compare=False)

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dy(self) -> float:
        return self.L / self.ny

    @property
    def dz(self) -> float:
        return 1.0 / self.nz

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def shape2d(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def area(self) -> float:
        return self.L * self.L

    @property
    def volume(self) -> float:
        return self.L * self.L

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.dy

    @property
    def z(self) -> np.ndarray:
        return (np.arange(self.nz) + 0.5) / self.nz

    @property
    def kappa(self) -> np.ndarray:
        return np.arange(self.nz)

    def mesh2d(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    def wavenumbers2d(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.kx, self.ky, indexing="ij")

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable ``(xi1, xi2, k)`` arrays of shape ``(nx, ny, nz)``."""
        return np.meshgrid(self.kx, self.ky, self.kz, indexing="ij")

    @property
    def kx_odd(self) -> np.ndarray:
        """``kx`` with the Nyquist entry zeroed, for odd-order symbols.

        The Nyquist index is its own conjugate partner, so an odd symbol
        there would make a real field complex.
        """
        k = self.kx.copy()
        k[self.nx // 2] = 0.0
        return k

    @property
    def ky_odd(self) -> np.ndarray:
        k = self.ky.copy()
        k[self.ny // 2] = 0.0
        return k

    def odd_wavenumbers2d(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.kx_odd, self.ky_odd, indexing="ij")

    def odd_wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.kx_odd, self.ky_odd, self.kz, indexing="ij")

    def vertical_weights(self, parity: str) -> np.ndarray:
        """Parseval weights: mean of phi_kappa^2 over (0, 1)."""
        w = np.full(self.nz, 0.5)
        if parity == EVEN:
            w[0] = 1.0
        else:
            w[0] = 0.0
        return w

    def dealias_mask(self) -> np.ndarray:
        jx = np.abs(np.fft.fftfreq(self.nx, 1.0 / self.nx))
        jy = np.abs(np.fft.fftfreq(self.ny, 1.0 / self.ny))
        mx = jx < self.nx / 3.0
        my = jy < self.ny / 3.0
        mz = np.arange(self.nz) < 2.0 * self.nz / 3.0
        if self.nz == 1:
            mz = np.ones(1, dtype=bool)
        return mx[:, None, None] & my[None, :, None] & mz[None, None, :]

    def dealias_mask2d(self) -> np.ndarray:
        return self.dealias_mask()[:, :, 0]


def make_grid(nx: int, ny: int, nz: int, L: float) -> Grid:
    """Build a grid; ``nx``, ``ny`` must be powers of two and ``L > 0``."""
    if not (_is_pow2(int(nx)) and _is_pow2(int(ny))) or nx < 2 or ny < 2:
        raise GridError(f"nx, ny must be powers of two >= 2, got ({nx}, {ny})")
    if int(nz) < 1:
        raise GridError(f"nz must be >= 1, got {nz}")
    if not (L > 0):
        raise GridError(f"L must be positive, got {L}")
    nx, ny, nz = int(nx), int(ny), int(nz)
    kx = 2.0 * np.pi / L * np.fft.fftfreq(nx, 1.0 / nx)
    ky = 2.0 * np.pi / L * np.fft.fftfreq(ny, 1.0 / ny)
    kz = np.pi * np.arange(nz, dtype=float)
    return Grid(nx, ny, nz, float(L), kx, ky, kz)


@dataclass
class ParityField:
    """Real samples on the grid with a declared vertical parity."""

    values: np.ndarray
    parity: str
    grid: Grid

    def __post_init__(self):
        if self.parity not in PARITIES:
            raise ValueError(f"parity must be 'even' or 'odd', got {self.parity!r}")
        if self.values.shape != self.grid.shape:
            raise ShapeMismatchError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}")


@dataclass
class SpectralField:
    """Complex coefficients indexed by ``(j1, j2, kappa)``."""

    coeffs: np.ndarray
    parity: str
    grid: Grid

    def __post_init__(self):
        if self.parity not in PARITIES:
            raise ValueError(f"parity must be 'even' or 'odd', got {self.parity!r}")
        if self.coeffs.shape != self.grid.shape:
            raise ShapeMismatchError(
                f"coeffs shape {self.coeffs.shape} != grid shape {self.grid.shape}")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.coeffs + other.coeffs, self.parity, self.grid)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.coeffs - other.coeffs, self.parity, self.grid)

    def scale(self, a) -> "SpectralField":
        return SpectralField(a * self.coeffs, self.parity, self.grid)


def _check_same(a: SpectralField, b: SpectralField) -> None:
    if a.parity != b.parity or a.coeffs.shape != b.coeffs.shape:
        raise ShapeMismatchError("fields differ in parity or shape")


# ---------------------------------------------------------------------------
# array-level transforms (used directly by the solvers)


def vertical_forward(values: np.ndarray, parity: str, axis: int = -1) -> np.ndarray:
    n = values.shape[axis]
    if parity == EVEN:
        y = sfft.dct(values, type=2, axis=axis, workers=_workers()) / n
        sl = [slice(None)] * values.ndim
        sl[axis] = 0
        y[tuple(sl)] *= 0.5
        return y
    y = sfft.dst(values, type=2, axis=axis, workers=_workers()) / n
    # slot kappa holds sin(kappa pi x); DST index j is mode j + 1
    out = np.zeros_like(y)
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    src[axis] = slice(0, n - 1)
    dst[axis] = slice(1, n)
    out[tuple(dst)] = y[tuple(src)]
    return out


def vertical_inverse(coeffs: np.ndarray, parity: str, axis: int = -1) -> np.ndarray:
    n = coeffs.shape[axis]
    if parity == EVEN:
        y = coeffs * n
        sl = [slice(None)] * coeffs.ndim
        sl[axis] = 0
        y[tuple(sl)] *= 2.0
        return sfft.idct(y, type=2, axis=axis, workers=_workers())
    y = np.zeros_like(coeffs)
    src = [slice(None)] * coeffs.ndim
    dst = [slice(None)] * coeffs.ndim
    src[axis] = slice(1, n)
    dst[axis] = slice(0, n - 1)
    y[tuple(dst)] = coeffs[tuple(src)] * n
    return sfft.idst(y, type=2, axis=axis, workers=_workers())


def forward_array(values: np.ndarray, parity: str) -> np.ndarray:
    """Physical ``(nx, ny, nz)`` samples to coefficients."""
    nx, ny = values.shape[0], values.shape[1]
    v = vertical_forward(np.asarray(values, dtype=float), parity, axis=2)
    return sfft.fft2(v, axes=(0, 1), workers=_workers()) / (nx * ny)


def inverse_array(coeffs: np.ndarray, parity: str) -> np.ndarray:
    nx, ny = coeffs.shape[0], coeffs.shape[1]
    h = sfft.ifft2(coeffs, axes=(0, 1), workers=_workers()) * (nx * ny)
    # real and imaginary parts are transformed together: linear and real kernels
    v = vertical_inverse(h.real, parity, axis=2)
    return v


def forward2d(values: np.ndarray) -> np.ndarray:
    nx, ny = values.shape
    return sfft.fft2(values, workers=_workers()) / (nx * ny)


def inverse2d(coeffs: np.ndarray) -> np.ndarray:
    nx, ny = coeffs.shape
    return (sfft.ifft2(coeffs, workers=_workers()) * (nx * ny)).real


# ---------------------------------------------------------------------------
# field-level operations


def transform_forward(f: ParityField) -> SpectralField:
    if f.values.shape != f.grid.shape:
        raise ShapeMismatchError("field shape does not match grid")
    return SpectralField(forward_array(f.values, f.parity), f.parity, f.grid)


def transform_inverse(F: SpectralField) -> ParityField:
    if F.coeffs.shape != F.grid.shape:
        raise ShapeMismatchError("coefficient shape does not match grid")
    return ParityField(inverse_array(F.coeffs, F.parity), F.parity, F.grid)


_AXES = {"x1": 0, "x2": 1, "x3": 2, 0: 0, 1: 1, 2: 2}


def derivative_array(coeffs: np.ndarray, parity: str, grid: Grid, axis, order: int = 1):
    """Spectral derivative of a coefficient array; returns ``(coeffs, parity)``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    ax = _AXES[axis]
    if ax in (0, 1):
        k = grid.kx if ax == 0 else grid.ky
        if order % 2:
            k = grid.kx_odd if ax == 0 else grid.ky_odd
        sym = (1j * k) ** order
        shape = [1] * coeffs.ndim
        shape[ax] = -1
        return coeffs * sym.reshape(shape), parity
    out = coeffs
    par = parity
    k = grid.kz[None, None, :]
    for _ in range(order):
        if par == EVEN:
            # d/dx cos(k x) = -k sin(k x)
            out = -k * out
            par = ODD
        else:
            out = k * out
            par = EVEN
    return out, par


def spectral_derivative(F: SpectralField, axis, order: int = 1) -> SpectralField:
    c, p = derivative_array(F.coeffs, F.parity, F.grid, axis, order)
    return SpectralField(c, p, F.grid)


def laplacian_h(F: SpectralField) -> SpectralField:
    KX, KY, _ = F.grid.wavenumbers()
    return SpectralField(-(KX ** 2 + KY ** 2) * F.coeffs, F.parity, F.grid)


def vertical_average_array(coeffs: np.ndarray, parity: str) -> np.ndarray:
    """Exact mean over (0, 1) of a band-limited field, per horizontal mode."""
    if parity == EVEN:
        return coeffs[..., 0].copy()
    nz = coeffs.shape[-1]
    kap = np.arange(nz)
    w = np.zeros(nz)
    odd = kap % 2 == 1
    w[odd] = 2.0 / (kap[odd] * np.pi)
    return coeffs @ w


def vertical_average(F: SpectralField) -> np.ndarray:
    """Vertical mean as 2D horizontal coefficients of shape ``(nx, ny)``."""
    return vertical_average_array(F.coeffs, F.parity)


def invert_helmholtz_h(rhs: np.ndarray, omega: float, grid: Grid,
                       tol: float = 1e-12) -> np.ndarray:
    """Solve ``-Lap_h q + omega^2 q = rhs`` for 2D coefficients ``rhs``.

    With ``omega = 0`` the mean of ``q`` is fixed to zero and a right-hand side
    with nonzero mean is rejected.
    """
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    if rhs.shape != grid.shape2d:
        raise ShapeMismatchError("rhs must be a horizontal (nx, ny) coefficient array")
    KX, KY = grid.wavenumbers2d()
    denom = KX ** 2 + KY ** 2 + omega ** 2
    if omega ** 2 == 0.0:  # includes omega so small that omega^2 underflows
        scale = max(1.0, float(np.max(np.abs(rhs))))
        if abs(rhs[0, 0]) > tol * scale:
            raise SingularInversionError(
                f"omega = 0 requires a mean-free right-hand side, mean = {rhs[0, 0]!r}")
        denom = denom.copy()
        denom[0, 0] = 1.0
        q = rhs / denom
        q[0, 0] = 0.0
        return q
    return rhs / denom


def helmholtz_project_h(u1: np.ndarray, u2: np.ndarray, grid: Grid):
    """Leray projection of a horizontal vector field given by coefficients.

    Works on ``(nx, ny)`` or ``(nx, ny, nz)`` arrays; the horizontal mean is
    kept (it is divergence free and orthogonal to every gradient).
    """
    KX, KY = grid.odd_wavenumbers2d()
    if u1.ndim == 3:
        KX = KX[:, :, None]
        KY = KY[:, :, None]
    k2 = KX ** 2 + KY ** 2
    k2s = np.where(k2 == 0, 1.0, k2)
    div = KX * u1 + KY * u2
    p1 = u1 - KX * div / k2s
    p2 = u2 - KY * div / k2s
    return p1, p2


def dealias(F: SpectralField) -> SpectralField:
    return SpectralField(F.coeffs * F.grid.dealias_mask(), F.parity, F.grid)


def dealias_array(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    if coeffs.ndim == 2:
        return coeffs * grid.dealias_mask2d()
    return coeffs * grid.dealias_mask()


def product_parity(pa: str, pb: str) -> str:
    return EVEN if pa == pb else ODD


def weighted_inner(a: np.ndarray, b: np.ndarray, parity: str, grid: Grid) -> float:
    """L2(Omega) inner product of two real fields from their coefficients."""
    w = grid.vertical_weights(parity)
    return float(grid.volume * np.sum(w * np.real(np.conj(a) * b)))


def l2_norm_sq(coeffs: np.ndarray, parity: str, grid: Grid) -> float:
    return weighted_inner(coeffs, coeffs, parity, grid)


def l2_norm_sq_physical(values: np.ndarray, grid: Grid) -> float:
    """Midpoint/trapezoid quadrature of ``values**2`` over Omega."""
    return float(grid.volume * np.mean(values * values))


def integrate(values: np.ndarray, grid: Grid) -> float:
    """Integral over Omega (3D) or over the periodic square (2D samples)."""
    if values.ndim == 2:
        return float(grid.area * np.mean(values))
    return float(grid.volume * np.mean(values))
