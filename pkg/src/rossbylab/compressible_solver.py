"""Desk-scale solver for the scaled rotating compressible Navier-Stokes system.

The slab (0, 1) in x3 is handled by parity: density and horizontal velocity
are even in x3, the vertical velocity is odd, which realises the slip
condition on the flat walls.  The horizontal plane is a periodic square of
side ``L`` large enough that the data sit well inside it.

Besides the time stepper the module holds the machinery used to compare a
solution with the limit dynamics: equation of state, static states, energy
and relative entropy, the essential/residual splitting, smoothing of the
initial data, their kernel decomposition, the test functions
r = rho~ + eps^m (q + s), U = v + V, and the term-by-term relative entropy
balance.
"""
from __future__ import annotations

import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from .dispersion_lab import _step
from .limit_solvers import (
    CFLError,
    NumericalBlowupError,
    QGState,
    Vorticity2D,
    _transport_rhs,
    euler_step,
    qg_step,
)
from .spectral_core import (
    EVEN,
    ODD,
    Grid,
    ParityField,
    forward2d,
    forward_array,
    helmholtz_project_h,
    inverse2d,
    inverse_array,
    invert_helmholtz_h,
    vertical_average_array,
)
from .wave_operator import (
    SpectralState4,
    WavePropagator,
    apply_B,
    kernel_condition_residual,
    kernel_project,
)

U_PARITY = (EVEN, EVEN, ODD)
RHO_MIN = 1e-6


class RegimeError(ValueError):
    """Exponents outside the multiscale regime m/2 > n >= 1, alpha > 0."""


class PositivityError(ValueError):
    """A density (or test density) is not strictly positive."""


class VacuumError(PositivityError):
    """Density dropped below the vacuum guard during time stepping."""


class InsufficientSweepError(ValueError):
    """Fewer than three eps values supplied to a sweep fit."""


class TimeGridMismatchError(ValueError):
    """Trajectory and test functions are not sampled on the same times."""


class SupportWarning(UserWarning):
    """Data reach into the outer 10% of the periodic square."""


# ---------------------------------------------------------------------------
# equation of state and regime


@dataclass(frozen=True)
class EquationOfState:
    """Normalised gamma law p = rho^gamma / gamma, so that p'(1) = 1."""

    gamma: float = 2.0

    def __post_init__(self):
        if not self.gamma > 1.5:
            raise ValueError("gamma must exceed 3/2")

    def p(self, rho):
        return np.power(rho, self.gamma) / self.gamma

    def dp(self, rho):
        return np.power(rho, self.gamma - 1.0)

    def H(self, rho):
        """Pressure potential rho * int_1^rho p(z)/z^2 dz."""
        g = self.gamma
        return (np.power(rho, g) - rho) / (g * (g - 1.0))

    def dH(self, rho):
        g = self.gamma
        return (g * np.power(rho, g - 1.0) - 1.0) / (g * (g - 1.0))

    def d2H(self, rho):
        return np.power(rho, self.gamma - 2.0)

    def dH_inverse(self, y):
        """Solve H'(rho) = y (closed form for the gamma law)."""
        g = self.gamma
        base = 1.0 + g * (g - 1.0) * np.asarray(y, float)
        if np.any(base <= 0):
            raise PositivityError("H'(rho) = y has no positive solution")
        return np.power(base / g, 1.0 / (g - 1.0))

    def bregman(self, rho, r):
        """H(rho) - H'(r)(rho - r) - H(r), evaluated without cancellation."""
        g = self.gamma
        rho = np.asarray(rho, float)
        r = np.asarray(r, float)
        x = (rho - r) / r
        small = np.abs(x) < 0.05
        out = np.empty(np.broadcast(rho, r).shape)
        xs = np.broadcast_to(x, out.shape)[small]
        # (1+x)^g - 1 - g x = sum_{j>=2} binom(g, j) x^j
        acc = np.zeros_like(xs)
        coef = g * (g - 1.0) / 2.0
        xp = xs * xs
        for j in range(2, 16):
            acc += coef * xp
            coef *= (g - j) / (j + 1.0)
            xp = xp * xs
        xb = np.broadcast_to(x, out.shape)
        xl = xb[~small]
        big = np.power(1.0 + xl, g) - 1.0 - g * xl
        rg = np.power(np.broadcast_to(r, out.shape), g) / (g * (g - 1.0))
        out[small] = acc * rg[small]
        out[~small] = big * rg[~small]
        return out


@dataclass(frozen=True)
class ScalingRegime:
    """eps with exponents: Rossby eps, Mach eps^m, Froude eps^n, viscosity eps^alpha."""

    eps: float
    m: float = 3.0
    n: float = 1.0
    alpha: float = 1.0
    mu: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise RegimeError("eps must lie in (0, 1]")
        if not (self.m / 2 > self.n >= 1):
            raise RegimeError(f"need m/2 > n >= 1, got m = {self.m}, n = {self.n}")
        if not self.alpha > 0:
            raise RegimeError("need alpha > 0")
        if not (self.mu > 0 and self.eta >= 0):
            raise RegimeError("need mu > 0, eta >= 0")

    @property
    def omega(self) -> float:
        return self.eps ** (self.m - 1)

    @property
    def mach(self) -> float:
        return self.eps ** self.m

    @property
    def froude(self) -> float:
        return self.eps ** self.n

    @property
    def viscosity(self) -> float:
        return self.eps ** self.alpha

    @property
    def stratification(self) -> float:
        """eps^(2(m-n)), the size of the static density variation."""
        return self.eps ** (2 * (self.m - self.n))


@dataclass(frozen=True)
class Forces:
    """Switches for the individual terms of the momentum equation."""

    rotation: bool = True
    gravity: bool = True
    viscosity: bool = True


def static_profile(x3, regime: ScalingRegime, eos: EquationOfState) -> np.ndarray:
    """rho~(x3) from H'(rho~) = eps^(2(m-n)) G + H'(1), G = -x3."""
    c = regime.stratification
    g = eos.gamma
    base = 1.0 - (g - 1.0) * c * np.asarray(x3, float)
    if np.any(base <= 0):
        raise PositivityError("stratification too strong: static density reaches vacuum")
    return np.power(base, 1.0 / (g - 1.0))


def static_state(regime: ScalingRegime, eos: EquationOfState, grid: Grid,
                 forces: Forces = Forces()) -> ParityField:
    """Static density on the grid (identically 1 when gravity is switched off)."""
    if not forces.gravity:
        return ParityField(np.ones(grid.shape), EVEN, grid)
    prof = static_profile(grid.z, regime, eos)
    return ParityField(np.broadcast_to(prof, grid.shape).copy(), EVEN, grid)


# ---------------------------------------------------------------------------
# state


@dataclass
class FluidState:
    rho: ParityField
    u: tuple
    time: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    @classmethod
    def from_arrays(cls, rho: np.ndarray, u, grid: Grid, time: float = 0.0) -> "FluidState":
        return cls(ParityField(np.asarray(rho, float), EVEN, grid),
                   tuple(ParityField(np.asarray(u[i], float), U_PARITY[i], grid) for i in range(3)),
                   time)

    def arrays(self):
        return self.rho.values, np.stack([f.values for f in self.u])

    def momentum(self) -> np.ndarray:
        return self.rho.values * np.stack([f.values for f in self.u])


def _support_check(values: np.ndarray, grid: Grid, name: str) -> None:
    X, Y = grid.mesh2d()
    band = ((X < 0.1 * grid.L) | (X > 0.9 * grid.L) | (Y < 0.1 * grid.L) | (Y > 0.9 * grid.L))
    scale = float(np.max(np.abs(values)))
    if scale == 0:
        return
    edge = float(np.max(np.abs(values[band]))) if values.ndim == 2 else \
        float(np.max(np.abs(values[band, :])))
    if edge > 1e-8 * scale:
        warnings.warn(f"{name} reaches within 10% of the periodic boundary "
                      f"(relative size {edge / scale:.2e})", SupportWarning, stacklevel=3)


def initial_state(rho1: np.ndarray, u0, regime: ScalingRegime, grid: Grid,
                  eos: EquationOfState = EquationOfState(),
                  forces: Forces = Forces(), band_limit: bool = True) -> FluidState:
    """rho(0) = rho~ + eps^m rho1, u(0) = u0 from physical samples."""
    rho1 = np.asarray(rho1, float)
    _support_check(rho1, grid, "rho1")
    for i in range(3):
        _support_check(np.asarray(u0[i], float), grid, f"u0[{i}]")
    if band_limit:
        # the stepper freezes modes outside the 2/3 band, so start inside it
        mask = grid.dealias_mask()
        rho1 = inverse_array(forward_array(rho1, EVEN) * mask, EVEN)
        u0 = [inverse_array(forward_array(np.asarray(u0[i], float), U_PARITY[i]) * mask,
                            U_PARITY[i]) for i in range(3)]
    rho = static_state(regime, eos, grid, forces).values + regime.mach * rho1
    if np.min(rho) <= 0:
        raise PositivityError(f"initial density not positive (min {np.min(rho):.3g})")
    return FluidState.from_arrays(rho, u0, grid)


def mass(state: FluidState) -> float:
    return float(state.grid.volume * np.mean(state.rho.values))


# ---------------------------------------------------------------------------
# spectral calculus on parity fields


def _grad_coeffs(c: np.ndarray, parity: str, grid: Grid):
    KX, KY, KZ = grid.odd_wavenumbers()
    if parity == EVEN:
        return [(1j * KX * c, EVEN), (1j * KY * c, EVEN), (-KZ * c, ODD)]
    return [(1j * KX * c, ODD), (1j * KY * c, ODD), (KZ * c, EVEN)]


def gradient(values: np.ndarray, parity: str, grid: Grid) -> np.ndarray:
    """(3, nx, ny, nz) samples of the gradient of a parity field."""
    c = forward_array(values, parity)
    return np.stack([inverse_array(g, p) for g, p in _grad_coeffs(c, parity, grid)])


def velocity_gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """G[i, j] = d_j u_i for the velocity samples ``u`` of shape (3, ...)."""
    return np.stack([gradient(u[i], U_PARITY[i], grid) for i in range(3)])


def stress(G: np.ndarray, mu: float, eta: float) -> np.ndarray:
    """S(grad u) = mu (G + G^T - 2/3 div u I) + eta div u I."""
    div = G[0, 0] + G[1, 1] + G[2, 2]
    S = mu * (G + np.swapaxes(G, 0, 1))
    for i in range(3):
        S[i, i] += (eta - 2.0 * mu / 3.0) * div
    return S


def divergence(u: np.ndarray, grid: Grid) -> np.ndarray:
    KX, KY, KZ = grid.odd_wavenumbers()
    c = [forward_array(u[i], U_PARITY[i]) for i in range(3)]
    return inverse_array(1j * KX * c[0] + 1j * KY * c[1] + KZ * c[2], EVEN)


def _integral(values: np.ndarray, grid: Grid) -> float:
    return float(grid.volume * np.mean(values))


# ---------------------------------------------------------------------------
# time stepping


def acoustic_dt(state: FluidState, regime: ScalingRegime, eos: EquationOfState,
                cfl: float = 0.4) -> float:
    g = state.grid
    dxmin = min(g.dx, g.dy, g.dz)
    c = float(np.sqrt(np.max(eos.dp(state.rho.values))))
    return cfl * regime.mach * dxmin / c


def viscous_dt(grid: Grid, regime: ScalingRegime, safety: float = 2.0) -> float:
    """Explicit RK4 limit of the viscous term on the dealiased band (real-axis bound 2.78)."""
    kx, ky, kz = grid.wavenumbers()
    k2 = float(np.max((kx ** 2 + ky ** 2 + kz ** 2)[grid.dealias_mask()]))
    rate = regime.viscosity * (4.0 * regime.mu / 3.0 + regime.eta) * k2
    return safety / rate if rate > 0 else math.inf


def stable_dt(state: FluidState, regime: ScalingRegime, eos: EquationOfState,
              cfl: float = 0.4, forces: Forces = Forces()) -> float:
    dt = acoustic_dt(state, regime, eos, cfl)
    if forces.viscosity:
        dt = min(dt, viscous_dt(state.grid, regime))
    return dt


def _ns_rhs(rho: np.ndarray, mom: np.ndarray, rho_s: np.ndarray, regime: ScalingRegime,
            eos: EquationOfState, forces: Forces, grid: Grid):
    KX, KY, KZ = grid.odd_wavenumbers()
    kx, ky, kz = grid.wavenumbers()
    mask = grid.dealias_mask()
    u = mom / rho
    cm = [forward_array(mom[i], U_PARITY[i]) for i in range(3)]
    drho = -(1j * KX * cm[0] + 1j * KY * cm[1] + KZ * cm[2])

    # momentum flux div(rho u x u), F symmetric
    F = {}
    for i in range(3):
        for j in range(i, 3):
            par = EVEN if U_PARITY[i] == U_PARITY[j] else ODD
            F[i, j] = F[j, i] = forward_array(mom[i] * u[j], par)
    rhs = []
    for i in range(3):
        # d_3 of an odd field gives +k, of an even field -k
        d3 = KZ * F[i, 2] if U_PARITY[i] == EVEN else -KZ * F[i, 2]
        rhs.append(-(1j * KX * F[i, 0] + 1j * KY * F[i, 1] + d3))

    # pressure and gravity together: eps^-2m grad p(rho) - eps^-2n rho grad G
    # = eps^-2m rho grad(H'(rho) - H'(rho~)); the potential vanishes at rest and
    # its even extension stays smooth under the slip condition
    phi = eos.dH(rho) - eos.dH(rho_s)
    gphi = gradient(phi, EVEN, grid)
    inv_mach2 = 1.0 / regime.mach ** 2
    for i in range(3):
        rhs[i] -= inv_mach2 * forward_array(rho * gphi[i], U_PARITY[i])

    if forces.rotation:
        # -(1/eps) rho f x u = (rho u2, -rho u1, 0) / eps
        rhs[0] += cm[1] / regime.eps
        rhs[1] -= cm[0] / regime.eps
    if forces.viscosity:
        cu = [forward_array(u[i], U_PARITY[i]) for i in range(3)]
        lap = -(kx ** 2 + ky ** 2 + kz ** 2)
        d = 1j * KX * cu[0] + 1j * KY * cu[1] + KZ * cu[2]
        gd = (1j * KX * d, 1j * KY * d, -KZ * d)
        nu = regime.viscosity
        lam = regime.mu / 3.0 + regime.eta
        for i in range(3):
            rhs[i] += nu * (regime.mu * lap * cu[i] + lam * gd[i])

    drho_v = inverse_array(drho * mask, EVEN)
    dmom = np.stack([inverse_array(rhs[i] * mask, U_PARITY[i]) for i in range(3)])
    return drho_v, dmom


def _dump(rho, mom, t) -> str:
    path = os.path.join(tempfile.gettempdir(), f"rossbylab_dump_t{t:.6g}.npz")
    try:
        np.savez(path, rho=rho, mom=mom, t=t)
    except OSError:
        path = "<dump failed>"
    return path


def ns_step(state: FluidState, regime: ScalingRegime, eos: EquationOfState, dt: float,
            forces: Forces = Forces(), rho_static: Optional[np.ndarray] = None,
            cfl: float = 0.4) -> FluidState:
    """One RK4 step in conservative variables (rho, rho u)."""
    grid = state.grid
    limit = acoustic_dt(state, regime, eos, cfl)
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.3g} exceeds the acoustic limit {limit:.3g}")
    if forces.viscosity and dt > viscous_dt(grid, regime):
        raise CFLError(f"dt = {dt:.3g} exceeds the viscous limit {viscous_dt(grid, regime):.3g}")
    rho_s = static_state(regime, eos, grid, forces).values if rho_static is None else rho_static
    rho = state.rho.values
    if np.min(rho) < RHO_MIN:
        raise VacuumError(f"min rho = {np.min(rho):.3g} below {RHO_MIN}")
    mom = state.momentum()

    def f(r, m):
        if np.min(r) < RHO_MIN:
            raise VacuumError(f"min rho = {np.min(r):.3g} below {RHO_MIN}")
        return _ns_rhs(r, m, rho_s, regime, eos, forces, grid)

    k1 = f(rho, mom)
    k2 = f(rho + 0.5 * dt * k1[0], mom + 0.5 * dt * k1[1])
    k3 = f(rho + 0.5 * dt * k2[0], mom + 0.5 * dt * k2[1])
    k4 = f(rho + dt * k3[0], mom + dt * k3[1])
    rho_n = rho + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    mom_n = mom + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    t = state.time + dt
    if not (np.all(np.isfinite(rho_n)) and np.all(np.isfinite(mom_n))):
        raise NumericalBlowupError(f"non-finite values at t = {t:.6g}; state dumped to "
                                   f"{_dump(rho, mom, state.time)}")
    if np.min(rho_n) < RHO_MIN:
        raise VacuumError(f"min rho = {np.min(rho_n):.3g} below {RHO_MIN} at t = {t:.6g}")
    return FluidState.from_arrays(rho_n, mom_n / rho_n, grid, t)


# ---------------------------------------------------------------------------
# energy, relative entropy, splitting


def energy_functional(state: FluidState, rho_static, regime: ScalingRegime,
                      eos: EquationOfState) -> float:
    """int 1/2 rho |u|^2 + eps^-2m (H(rho) - H'(rho~)(rho - rho~) - H(rho~))."""
    rs = rho_static.values if isinstance(rho_static, ParityField) else rho_static
    rho, u = state.arrays()
    dens = 0.5 * rho * np.sum(u * u, axis=0) + eos.bregman(rho, rs) / regime.mach ** 2
    return math.fsum(dens.ravel()) * state.grid.volume / dens.size


def relative_entropy(state: FluidState, r, U, regime: ScalingRegime,
                     eos: EquationOfState) -> float:
    """E_eps(rho, u | r, U) = int 1/2 rho |u - U|^2 + eps^-2m (H(rho) - H'(r)(rho - r) - H(r))."""
    r = r.values if isinstance(r, ParityField) else np.asarray(r, float)
    if np.min(r) <= 0:
        raise PositivityError("test density r must be positive")
    U = np.stack([x.values if isinstance(x, ParityField) else x for x in U])
    rho, u = state.arrays()
    w = u - U
    dens = 0.5 * rho * np.sum(w * w, axis=0) + eos.bregman(rho, r) / regime.mach ** 2
    return math.fsum(dens.ravel()) * state.grid.volume / dens.size


def cutoff_chi(rho, lo: float, hi: float) -> np.ndarray:
    """Smooth chi supported in [lo, hi], equal to 1 on the middle half."""
    w = (hi - lo) / 4.0
    rho = np.asarray(rho, float)
    return _step((rho - lo) / w) * _step((hi - rho) / w)


def ess_res_split(h, rho, window=(0.5, 1.5)):
    """h_ess = chi(rho) h, h_res = h - h_ess."""
    lo, hi = window
    if not lo < 1 < hi:
        raise ValueError("window must contain 1 in its interior")
    h = np.asarray(h, float)
    ess = cutoff_chi(rho, lo, hi) * h
    return ess, h - ess


# ---------------------------------------------------------------------------
# smoothing and decomposition of initial data


def _radial_plateau(grid: Grid, delta: float, margin: float = 0.35) -> np.ndarray:
    X, Y = grid.mesh2d()
    r = np.hypot(X - grid.L / 2, Y - grid.L / 2)
    r1 = min(1.0 / delta, margin * grid.L)
    r2 = min(2.0 * r1, 0.45 * grid.L)
    return 1.0 - _step((r - r1) / (r2 - r1))


def frequency_cut(kmag, delta: float) -> np.ndarray:
    """psi_delta: 0 near 0 and infinity, equal to 1 on [delta, 1/delta]."""
    kmag = np.asarray(kmag, float)
    lo = _step((kmag - delta / 2) / (delta / 2))
    hi = 1.0 - _step((kmag - 1.0 / delta) / (1.0 / delta))
    return lo * hi


def smooth_truncate(h: np.ndarray, delta: float, grid: Grid, parity: str = EVEN) -> np.ndarray:
    """[h]_delta: spatial cut, frequency cut and vertical-mode cut of coefficients ``h``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    phi = _radial_plateau(grid, delta)
    KX, KY = grid.wavenumbers2d()
    psi = frequency_cut(np.hypot(KX, KY), delta)
    if h.ndim == 2:
        return forward2d(inverse2d(h) * phi) * psi
    vals = inverse_array(h, parity) * phi[:, :, None]
    c = forward_array(vals, parity) * psi[:, :, None]
    kmax = math.floor(1.0 / delta)
    c[:, :, kmax + 1:] = 0.0
    return c


class Decomposition(NamedTuple):
    """[rho1]_delta = s0 + q0, [u0]_delta = V0 + v0 (coefficient arrays)."""

    s0: np.ndarray
    q0: np.ndarray
    V0: tuple
    v0: tuple
    omega: float
    grid: Grid

    def wave_state(self) -> SpectralState4:
        return SpectralState4(self.s0.copy(), self.V0[0].copy(), self.V0[1].copy(),
                              self.V0[2].copy(), self.grid, self.omega)

    def kernel_state(self) -> SpectralState4:
        st = SpectralState4.zeros(self.grid, self.omega)
        st.s[..., 0] = self.q0
        st.V1[..., 0] = self.v0[0]
        st.V2[..., 0] = self.v0[1]
        return st

    def qg_state(self) -> QGState:
        """Potential vorticity of q~ = q0 / omega."""
        KX, KY = self.grid.wavenumbers2d()
        pi = -(KX ** 2 + KY ** 2 + self.omega ** 2) * self.q0 / self.omega
        return QGState(pi, self.omega, self.grid)


def decompose_initial_data(rho1: np.ndarray, u0, regime: ScalingRegime,
                           delta: Optional[float], grid: Grid) -> Decomposition:
    """Split smoothed data into the kernel of B(omega) and its orthogonal complement.

    ``rho1`` and ``u0`` are coefficient arrays (rho1, u1, u2 even; u3 odd).
    """
    u = list(u0)
    if delta is not None:
        rho1 = smooth_truncate(rho1, delta, grid, EVEN)
        u = [smooth_truncate(u[i], delta, grid, U_PARITY[i]) for i in range(3)]
    om = regime.omega
    q0, v1, v2 = kernel_project(rho1, u, om, grid)
    s0 = rho1.astype(complex).copy()
    s0[..., 0] -= q0
    V1 = u[0].astype(complex).copy()
    V2 = u[1].astype(complex).copy()
    V1[..., 0] -= v1
    V2[..., 0] -= v2
    return Decomposition(s0, q0, (V1, V2, u[2].astype(complex).copy()), (v1, v2), om, grid)


# ---------------------------------------------------------------------------
# test functions


@dataclass
class TestFunctionPair:
    """r = rho~ + eps^m (q + s), U = v + V with time derivatives (samples)."""

    __test__ = False  # not a pytest class

    t: float
    r: np.ndarray
    U: np.ndarray
    dr: np.ndarray
    dU: np.ndarray
    wave: SpectralState4
    qg: QGState
    eps: float
    delta: Optional[float]

    def balance_residual(self) -> float:
        q = self.qg.omega * self.qg.q
        KX, KY = self.qg.grid.odd_wavenumbers2d()
        v1 = -1j * KY * self.qg.q
        v2 = 1j * KX * self.qg.q
        return kernel_condition_residual(q, v1, v2, self.qg.omega, self.qg.grid)


def build_test_functions(t: float, regime: ScalingRegime, delta: Optional[float],
                         wave: SpectralState4, qg: QGState,
                         eos: EquationOfState = EquationOfState(),
                         rho_static: Optional[np.ndarray] = None,
                         forces: Forces = Forces()) -> TestFunctionPair:
    """Assemble (r, U) from a wave state at rescaled time t/eps^m and a QG state at t."""
    grid = wave.grid
    om = regime.omega
    rs = static_state(regime, eos, grid, forces).values if rho_static is None else rho_static
    # wave part and its physical-time derivative d/dt = -eps^-m B
    bw = apply_B(wave)
    s = inverse_array(wave.s, EVEN)
    V = np.stack([inverse_array(wave.V1, EVEN), inverse_array(wave.V2, EVEN),
                  inverse_array(wave.V3, ODD)])
    ds = -inverse_array(bw.s, EVEN) / regime.mach
    dV = -np.stack([inverse_array(bw.V1, EVEN), inverse_array(bw.V2, EVEN),
                    inverse_array(bw.V3, ODD)]) / regime.mach
    # geostrophic part: q = omega q~, v = grad_perp q~
    qt = qg.q
    KX, KY = grid.odd_wavenumbers2d()
    dpi = _transport_rhs(qg.pi, qt, grid)
    dqt = invert_helmholtz_h(-dpi, qg.omega, grid)
    q = om * inverse2d(qt)
    dq = om * inverse2d(dqt)
    v = (inverse2d(-1j * KY * qt), inverse2d(1j * KX * qt))
    dv = (inverse2d(-1j * KY * dqt), inverse2d(1j * KX * dqt))
    r = rs + regime.mach * (q[:, :, None] + s)
    dr = regime.mach * (dq[:, :, None] + ds)
    U = V.copy()
    dU = dV.copy()
    for i in range(2):
        U[i] += v[i][:, :, None]
        dU[i] += dv[i][:, :, None]
    if np.min(r) <= 0:
        raise PositivityError("test density r is not positive; decrease eps or the data size")
    return TestFunctionPair(t, r, U, dr, dU, wave, qg, regime.eps, delta)


# ---------------------------------------------------------------------------
# relative entropy balance


REI_TERMS = ("initial", "convective", "viscous_U", "coriolis", "forcing",
             "pressure_div", "gravity")


def rei_integrands(state: FluidState, pair: TestFunctionPair, regime: ScalingRegime,
                   eos: EquationOfState, rho_static: np.ndarray,
                   forces: Forces = Forces()) -> dict:
    """Instantaneous spatial integrals of every time-integrated term of the balance."""
    grid = state.grid
    rho, u = state.arrays()
    r, U = pair.r, pair.U
    Gu = velocity_gradient(u, grid)
    GU = velocity_gradient(U, grid)
    mu, eta = regime.mu, regime.eta
    nu = regime.viscosity if forces.viscosity else 0.0
    w = U - u
    # rho (dU/dt + u . grad U) . (U - u)
    adv = pair.dU + np.einsum("j...,ij...->i...", u, GU)
    out = {}
    out["convective"] = _integral(rho * np.sum(adv * w, axis=0), grid)
    SU = stress(GU, mu, eta)
    Gw = GU - Gu
    out["viscous_U"] = nu * _integral(np.einsum("ij...,ij...->...", SU, Gw), grid)
    Su = stress(Gu, mu, eta)
    out["viscous_lhs"] = nu * _integral(np.einsum("ij...,ij...->...", Su - SU, Gu - GU), grid)
    if forces.rotation:
        fxu = np.stack([-u[1], u[0], np.zeros_like(u[0])])
        out["coriolis"] = _integral(rho * np.sum(fxu * w, axis=0), grid) / regime.eps
    else:
        out["coriolis"] = 0.0
    inv2 = 1.0 / regime.mach ** 2
    dHr_dt = eos.d2H(r) * pair.dr
    gH = gradient(eos.dH(r) - eos.dH(rho_static), EVEN, grid)
    flux = r * U - rho * u
    out["forcing"] = inv2 * _integral((r - rho) * dHr_dt + np.sum(gH * flux, axis=0), grid)
    divU = GU[0, 0] + GU[1, 1] + GU[2, 2]
    out["pressure_div"] = -inv2 * _integral(divU * (eos.p(rho) - eos.p(r)), grid)
    if forces.gravity:
        # -(1/eps^2n) (rho - r) grad G . U with grad G = -e3
        out["gravity"] = _integral((rho - r) * U[2], grid) / regime.froude ** 2
    else:
        out["gravity"] = 0.0
    out["entropy"] = relative_entropy(state, r, U, regime, eos)
    return out


@dataclass
class REIReport:
    times: np.ndarray
    entropy: np.ndarray
    viscous_lhs: np.ndarray
    terms: dict
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def slack(self) -> np.ndarray:
        return self.rhs - self.lhs

    def min_slack(self) -> float:
        return float(np.min(self.slack))


def _time_integral(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    if len(t) < 3:
        out = np.zeros_like(y)
        if len(t) == 2:
            out[1] = 0.5 * (y[0] + y[1]) * (t[1] - t[0])
        return out
    return np.concatenate([[0.0], cumulative_simpson(y, x=t)])


def rei_report(times, integrands: Sequence[dict]) -> REIReport:
    """Combine per-time integrands into cumulative left and right sides."""
    t = np.asarray(times, float)
    if len(t) != len(integrands):
        raise TimeGridMismatchError("one integrand record per time is required")
    get = lambda k: np.array([d[k] for d in integrands])  # noqa: E731
    ent = get("entropy")
    visc = _time_integral(get("viscous_lhs"), t)
    terms = {"initial": np.full(len(t), ent[0])}
    rhs = terms["initial"].copy()
    for k in REI_TERMS[1:]:
        terms[k] = _time_integral(get(k), t)
        rhs = rhs + terms[k]
    return REIReport(t, ent, visc, terms, ent + visc, rhs)


def rei_residual(trajectory: Sequence[FluidState], pair_series: Sequence[TestFunctionPair],
                 regime: ScalingRegime, eos: EquationOfState = EquationOfState(),
                 forces: Forces = Forces()) -> REIReport:
    """Evaluate every term of the relative entropy balance along a trajectory."""
    if len(trajectory) != len(pair_series):
        raise TimeGridMismatchError("trajectory and test functions differ in length")
    for s, p in zip(trajectory, pair_series):
        if abs(s.time - p.t) > 1e-12 * max(1.0, abs(s.time)):
            raise TimeGridMismatchError(f"time mismatch: {s.time} vs {p.t}")
    grid = trajectory[0].grid
    rs = static_state(regime, eos, grid, forces).values
    recs = [rei_integrands(s, p, regime, eos, rs, forces) for s, p in zip(trajectory, pair_series)]
    return rei_report([s.time for s in trajectory], recs)


# ---------------------------------------------------------------------------
# uniform bounds


@dataclass
class BoundsDiagnostics:
    """Per-time diagnostics of one trajectory."""

    eps: float
    m: float = 3.0
    times: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    density_ess: list = field(default_factory=list)
    residual_measure: list = field(default_factory=list)
    residual_gamma: list = field(default_factory=list)
    dissipation_rate: list = field(default_factory=list)
    density_dev: list = field(default_factory=list)

    def add(self, state: FluidState, rho_static: np.ndarray, regime: ScalingRegime,
            eos: EquationOfState, window=(0.5, 1.5)) -> None:
        grid = state.grid
        rho, u = state.arrays()
        self.times.append(state.time)
        self.kinetic.append(math.sqrt(_integral(rho * np.sum(u * u, axis=0), grid)))
        dev = rho - rho_static
        ess, _ = ess_res_split(dev / regime.mach, rho, window)
        self.density_ess.append(math.sqrt(_integral(ess * ess, grid)))
        _, one_res = ess_res_split(np.ones_like(rho), rho, window)
        _, rho_res = ess_res_split(rho, rho, window)
        self.residual_measure.append(_integral(one_res, grid))
        self.residual_gamma.append(_integral(np.abs(rho_res) ** eos.gamma, grid))
        G = velocity_gradient(u, grid)
        div = G[0, 0] + G[1, 1] + G[2, 2]
        T = G + np.swapaxes(G, 0, 1)
        for i in range(3):
            T[i, i] -= 2.0 / 3.0 * div
        self.dissipation_rate.append(regime.viscosity * _integral(np.sum(T * T, axis=(0, 1)), grid))
        self.density_dev.append(math.sqrt(_integral(dev * dev, grid)))


@dataclass
class BoundsReport:
    rows: list
    density_exponent: float
    kinetic_spread: float


def fit_exponent(eps, values) -> float:
    """Least-squares slope of log(values) against log(eps)."""
    x, y = np.log(np.asarray(eps, float)), np.log(np.asarray(values, float))
    return float(np.polyfit(x, y, 1)[0])


def uniform_bounds_report(trajectory, m: float = 3.0, n: float = 1.0, alpha: float = 1.0,
                          eos: EquationOfState = EquationOfState()) -> BoundsReport:
    """Tabulate the eps-uniform bounds over a sweep.

    ``trajectory`` is a sequence of ``BoundsDiagnostics`` or a mapping from eps
    to a sequence of ``FluidState`` at common times.
    """
    if isinstance(trajectory, Mapping):
        diags = []
        for eps, states in trajectory.items():
            reg = ScalingRegime(eps, m, n, alpha)
            d = BoundsDiagnostics(eps, m)
            rs = static_state(reg, eos, states[0].grid).values
            for s in states:
                d.add(s, rs, reg, eos)
            diags.append(d)
    else:
        diags = list(trajectory)
    if len({d.eps for d in diags}) < 3:
        raise InsufficientSweepError("at least three eps values are needed for the fits")
    rows = []
    for d in sorted(diags, key=lambda d: -d.eps):
        t = np.asarray(d.times)
        diss = _time_integral(np.asarray(d.dissipation_rate), t)[-1] if len(t) > 1 else 0.0
        rows.append({
            "eps": d.eps,
            "sup_kinetic": max(d.kinetic),
            "sup_density_ess": max(d.density_ess),
            "sup_residual_measure_scaled": max(d.residual_measure) / d.eps ** (2 * d.m),
            "sup_residual_gamma_scaled": max(d.residual_gamma) / d.eps ** (2 * d.m),
            "dissipation": diss,
            "sup_density_dev": max(d.density_dev),
        })
    eps = [r["eps"] for r in rows]
    dev = [r["sup_density_dev"] for r in rows]
    kin = [r["sup_kinetic"] for r in rows]
    expo = fit_exponent(eps, dev) if min(dev) > 0 else float("inf")
    spread = max(kin) / min(kin) if min(kin) > 0 else 1.0
    return BoundsReport(rows, expo, spread)


# ---------------------------------------------------------------------------
# singular limit study


@dataclass(frozen=True)
class LimitSetup:
    """Grid, regime exponents, data and output cadence of a limit run."""

    nx: int = 64
    ny: int = 64
    nz: int = 8
    L: float = 20.0
    m: float = 3.0
    n: float = 1.0
    alpha: float = 1.0
    mu: float = 1.0
    eta: float = 0.0
    gamma: float = 2.0
    delta: Optional[float] = 0.1
    T: float = 0.5
    width: float = 1.0
    vortex: float = 1.0
    divergent: float = 0.3
    density: float = 0.5
    local_radius: float = 4.0
    cfl: float = 0.36
    record_every: float = 0.05


def limit_initial_data(setup: LimitSetup, grid: Grid):
    """Column data (independent of x3, u3 = 0): a Gaussian vortex, an optional
    irrotational part and an optional density bump, all centred in the square."""
    X, Y, _ = grid.mesh()
    c = grid.L / 2
    w2 = setup.width ** 2
    g = np.exp(-((X - c) ** 2 + (Y - c) ** 2) / (2 * w2))
    # psi = vortex * g, u = grad_perp psi; phi = divergent * g, u += grad phi
    gx = -(X - c) / w2 * g
    gy = -(Y - c) / w2 * g
    u1 = -setup.vortex * gy + setup.divergent * gx
    u2 = setup.vortex * gx + setup.divergent * gy
    rho1 = setup.density * g
    return rho1, np.stack([u1, u2, np.zeros_like(u1)])


class LimitRow(NamedTuple):
    t: float
    eps: float
    delta: float
    Eeps: float
    energy: float
    mass: float
    dens_dev: float


@dataclass
class LimitResult:
    eps: float
    rows: list
    rei: REIReport
    energy0: float
    local_error: float
    bounds: BoundsDiagnostics
    steps: int
    dt: float

    def output_slack(self, times) -> np.ndarray:
        idx = [int(np.argmin(np.abs(self.rei.times - t))) for t in times]
        return self.rei.slack[idx]


def _local_error(state: FluidState, v, setup: LimitSetup) -> float:
    """L2 norm of sqrt(rho) u - v over the column |x_h - centre| <= R."""
    grid = state.grid
    rho, u = state.arrays()
    X, Y = grid.mesh2d()
    inside = np.hypot(X - grid.L / 2, Y - grid.L / 2) <= setup.local_radius
    w = np.sqrt(rho) * u
    w[0] -= v[0][:, :, None]
    w[1] -= v[1][:, :, None]
    dens = np.sum(w * w, axis=0) * inside[:, :, None]
    return math.sqrt(_integral(dens, grid))


def limit_study(eps: float, setup: LimitSetup = LimitSetup(), progress=None) -> LimitResult:
    """Run compressible NS, exact waves, QG and the Euler reference side by side."""
    from .spectral_core import make_grid  # local import keeps the module graph flat

    grid = make_grid(setup.nx, setup.ny, setup.nz, setup.L)
    regime = ScalingRegime(eps, setup.m, setup.n, setup.alpha, setup.mu, setup.eta)
    eos = EquationOfState(setup.gamma)
    rs = static_state(regime, eos, grid).values
    rho1, u0 = limit_initial_data(setup, grid)
    state = initial_state(rho1, u0, regime, grid, eos)
    # the state is band limited; decompose exactly that data
    rho1c = forward_array((state.rho.values - rs) / regime.mach, EVEN)
    uc = [forward_array(state.u[i].values, U_PARITY[i]) for i in range(3)]
    dec = decompose_initial_data(rho1c, uc, regime, setup.delta, grid)
    prop = WavePropagator(grid, regime.omega)
    wave_c = prop.coefficients(dec.wave_state())
    qg = dec.qg_state()
    ref = Vorticity2D(qg_reference_vorticity(uc, setup.delta, grid), grid)

    dt0 = stable_dt(state, regime, eos, setup.cfl)
    nsteps = 2 * math.ceil(setup.T / dt0 / 2)
    dt = setup.T / nsteps
    every = max(1, int(round(setup.record_every / dt)))

    def pair_at(t, qg_state):
        wave = prop.from_coefficients(wave_c, t / regime.mach)
        return build_test_functions(t, regime, setup.delta, wave, qg_state, eos, rs)

    E0 = energy_functional(state, rs, regime, eos)
    bounds = BoundsDiagnostics(eps, setup.m)
    rows, recs, times = [], [], []
    dlt = float("nan") if setup.delta is None else setup.delta

    def record(k, st, pair):
        rec = rei_integrands(st, pair, regime, eos, rs)
        recs.append(rec)
        times.append(st.time)
        if k % every == 0 or k == nsteps:
            dev = st.rho.values - rs
            rows.append(LimitRow(st.time, eps, dlt, rec["entropy"],
                                 energy_functional(st, rs, regime, eos), mass(st),
                                 math.sqrt(_integral(dev * dev, grid))))
            bounds.add(st, rs, regime, eos)

    record(0, state, pair_at(0.0, qg))
    for k in range(1, nsteps + 1):
        state = ns_step(state, regime, eos, dt, rho_static=rs)
        qg = qg_step(qg, dt)
        ref = euler_step(ref, dt)
        state = FluidState(state.rho, state.u, k * dt)
        qg = QGState(qg.pi, qg.omega, grid, k * dt)
        record(k, state, pair_at(k * dt, qg))
        if progress is not None:
            progress(k, nsteps)
    rep = rei_report(times, recs)
    v = [inverse2d(c) for c in _velocity(ref)]
    return LimitResult(eps, rows, rep, E0, _local_error(state, v, setup), bounds, nsteps, dt)


def _velocity(z: Vorticity2D):
    from .limit_solvers import velocity_from_q

    return velocity_from_q(z)


def qg_reference_vorticity(uc, delta: Optional[float], grid: Grid) -> np.ndarray:
    """Vorticity of the Euler limit data: curl of the vertical average of [u0]_delta."""
    u = list(uc[:2])
    if delta is not None:
        u = [smooth_truncate(u[i], delta, grid, EVEN) for i in range(2)]
    KX, KY = grid.odd_wavenumbers2d()
    ub = [vertical_average_array(c, EVEN) for c in u]
    zeta = 1j * KX * ub[1] - 1j * KY * ub[0]
    zeta[0, 0] = 0.0
    return zeta
