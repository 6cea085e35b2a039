"""Pseudo-spectral solvers for the planar Euler limit and the regularised
quasi-geostrophic equation.

Both systems are transport equations for a scalar potential vorticity

    d/dt Pi + grad_perp(q) . grad(Pi) = 0,   Pi = (Lap_h - omega^2) q,

with Euler recovered at omega = 0 (Pi = curl v, q the stream function).
Fields are 2D Fourier coefficient arrays in the ``forward2d`` normalisation.
The state is kept on the 2/3 band, so the semi-discrete system is a Galerkin
truncation and conserves energy and enstrophy exactly; RK4 adds only a small
time-stepping error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Union

import numpy as np

from .spectral_core import (
    EVEN,
    Grid,
    SingularInversionError,
    forward2d,
    inverse2d,
    invert_helmholtz_h,
    vertical_average_array,
)


class CFLError(ValueError):
    """Time step violates dt * max|v| / dx <= limit."""


class NumericalBlowupError(FloatingPointError):
    """Non-finite values appeared during a step."""


CFL_LIMIT = 0.5
_CFL_SLACK = 1e-12


@dataclass(frozen=True)
class Vorticity2D:
    """Vorticity ``zeta = curl_h v`` as horizontal coefficients."""

    zeta: np.ndarray
    grid: Grid
    time: float = 0.0

    def __post_init__(self):
        if self.zeta.shape != self.grid.shape2d:
            raise ValueError("zeta must have shape (nx, ny)")
        scale = max(1.0, float(np.max(np.abs(self.zeta))))
        if abs(self.zeta[0, 0]) > 1e-10 * scale:
            raise ValueError("vorticity on the periodic square must have zero mean")

    @classmethod
    def from_values(cls, values: np.ndarray, grid: Grid) -> "Vorticity2D":
        c = forward2d(values).astype(complex)
        c[0, 0] = 0.0
        return cls(c, grid)

    def values(self) -> np.ndarray:
        return inverse2d(self.zeta)

    def as_qg(self) -> "QGState":
        return QGState(self.zeta.copy(), 0.0, self.grid, self.time)


@dataclass(frozen=True)
class QGState:
    """Potential vorticity ``Pi = (Lap_h - omega^2) q`` with omega >= 0."""

    pi: np.ndarray
    omega: float
    grid: Grid
    time: float = 0.0

    def __post_init__(self):
        if self.pi.shape != self.grid.shape2d:
            raise ValueError("pi must have shape (nx, ny)")
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")

    @property
    def q(self) -> np.ndarray:
        """Coefficients of the scaled stream function q~."""
        return invert_helmholtz_h(-self.pi, self.omega, self.grid)

    def values(self) -> np.ndarray:
        return inverse2d(self.pi)


State = Union[Vorticity2D, QGState]


def _stream_euler(zeta: np.ndarray, grid: Grid) -> np.ndarray:
    KX, KY = grid.wavenumbers2d()
    k2 = KX ** 2 + KY ** 2
    k2[0, 0] = 1.0
    psi = -zeta / k2
    psi[0, 0] = 0.0
    return psi


def _perp_grad(psi: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    KX, KY = grid.odd_wavenumbers2d()
    return -1j * KY * psi, 1j * KX * psi


def velocity_from_stream(psi: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Physical velocity ``grad_perp psi = (-d2 psi, d1 psi)``."""
    v1, v2 = _perp_grad(psi, grid)
    return inverse2d(v1), inverse2d(v2)


def velocity_from_q(state: State) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of ``v = grad_perp q~`` (Euler: stream function of zeta)."""
    if isinstance(state, Vorticity2D):
        psi = _stream_euler(state.zeta, state.grid)
    else:
        psi = state.q
    return _perp_grad(psi, state.grid)


def _max_speed(psi: np.ndarray, grid: Grid) -> float:
    v1, v2 = velocity_from_stream(psi, grid)
    return float(np.sqrt(np.max(v1 * v1 + v2 * v2)))


def _transport_rhs(field: np.ndarray, psi: np.ndarray, grid: Grid) -> np.ndarray:
    """Dealiased ``-grad_perp(psi) . grad(field)``; the mean mode stays zero."""
    KX, KY = grid.odd_wavenumbers2d()
    mask = grid.dealias_mask2d()
    v1 = inverse2d(-1j * KY * psi * mask)
    v2 = inverse2d(1j * KX * psi * mask)
    f1 = inverse2d(1j * KX * field * mask)
    f2 = inverse2d(1j * KY * field * mask)
    rhs = -forward2d(v1 * f1 + v2 * f2) * mask
    rhs[0, 0] = 0.0
    return rhs


def _rk4(field: np.ndarray, dt: float, stream: Callable[[np.ndarray], np.ndarray],
         grid: Grid) -> np.ndarray:
    def f(x):
        return _transport_rhs(x, stream(x), grid)

    k1 = f(field)
    k2 = f(field + 0.5 * dt * k1)
    k3 = f(field + 0.5 * dt * k2)
    k4 = f(field + dt * k3)
    return field + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _check_cfl(psi: np.ndarray, grid: Grid, dt: float, limit: float) -> None:
    vmax = _max_speed(psi, grid)
    dx = min(grid.dx, grid.dy)
    if dt * vmax / dx > limit * (1 + _CFL_SLACK):
        raise CFLError(f"dt * max|v| / dx = {dt * vmax / dx:.3g} exceeds {limit}")


def _check_finite(field: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(field)):
        raise NumericalBlowupError(f"non-finite values at t = {t:.6g}")


def spectral_filter(coeffs: np.ndarray, grid: Grid, order: int = 36,
                    strength: float = 36.0) -> np.ndarray:
    """Exponential filter exp(-strength (|j|/j_max)^order) for long runs."""
    jx = np.abs(np.fft.fftfreq(grid.nx, 1.0 / grid.nx)) / (grid.nx / 2)
    jy = np.abs(np.fft.fftfreq(grid.ny, 1.0 / grid.ny)) / (grid.ny / 2)
    r = np.maximum(jx[:, None], jy[None, :])
    return coeffs * np.exp(-strength * r ** order)


def euler_step(state: Vorticity2D, dt: float, cfl: float = CFL_LIMIT,
               filter_order: Optional[int] = None) -> Vorticity2D:
    """One RK4 step of d/dt zeta + v . grad zeta = 0, v = grad_perp Lap^-1 zeta."""
    grid = state.grid
    zeta = state.zeta * grid.dealias_mask2d()
    _check_cfl(_stream_euler(zeta, grid), grid, dt, cfl)
    new = _rk4(zeta, dt, lambda z: _stream_euler(z, grid), grid)
    if filter_order:
        new = spectral_filter(new, grid, filter_order)
    _check_finite(new, state.time + dt)
    new[0, 0] = 0.0
    return Vorticity2D(new, grid, state.time + dt)


def qg_step(state: QGState, dt: float, cfl: float = CFL_LIMIT,
            filter_order: Optional[int] = None) -> QGState:
    """One RK4 step of the regularised QG equation for ``Pi``."""
    grid, om = state.grid, state.omega
    pi = state.pi * grid.dealias_mask2d()
    if om == 0.0 and abs(pi[0, 0]) > 1e-12 * max(1.0, float(np.max(np.abs(pi)))):
        raise SingularInversionError("omega = 0 requires a mean-free potential vorticity")

    def stream(p):
        return invert_helmholtz_h(-p, om, grid)

    _check_cfl(stream(pi), grid, dt, cfl)
    new = _rk4(pi, dt, stream, grid)
    if filter_order:
        new = spectral_filter(new, grid, filter_order)
    _check_finite(new, state.time + dt)
    return QGState(new, om, grid, state.time + dt)


def _pv_and_stream(state: State) -> tuple[np.ndarray, np.ndarray, float]:
    if isinstance(state, Vorticity2D):
        return state.zeta, _stream_euler(state.zeta, state.grid), 0.0
    return state.pi, state.q, state.omega


def qg_energy(state: State) -> float:
    """``int |grad q~|^2 + omega^2 |q~|^2`` by Parseval."""
    _, psi, om = _pv_and_stream(state)
    KX, KY = state.grid.wavenumbers2d()
    return float(state.grid.area * np.sum((KX ** 2 + KY ** 2 + om ** 2) * np.abs(psi) ** 2))


def kinetic_energy(state: State) -> float:
    """``int |v|^2`` with the discrete (Nyquist-free) velocity."""
    v1, v2 = velocity_from_q(state)
    return float(state.grid.area * np.sum(np.abs(v1) ** 2 + np.abs(v2) ** 2))


def enstrophy(state: State) -> float:
    """``int Pi^2`` (for Euler, ``int zeta^2``)."""
    pv, _, _ = _pv_and_stream(state)
    return float(state.grid.area * np.sum(np.abs(pv) ** 2))


def max_vorticity(state: State) -> float:
    pv, _, _ = _pv_and_stream(state)
    return float(np.max(np.abs(inverse2d(pv))))


def pressure(v1: np.ndarray, v2: np.ndarray, grid: Grid) -> np.ndarray:
    """Mean-free pressure from ``-Lap_h p = div div (v (x) v)``.

    ``v1``, ``v2`` are velocity coefficients; returns pressure coefficients.
    """
    KX, KY = grid.wavenumbers2d()
    a, b = inverse2d(v1), inverse2d(v2)
    w11, w12, w22 = forward2d(a * a), forward2d(a * b), forward2d(b * b)
    divdiv = -(KX * KX * w11 + 2 * KX * KY * w12 + KY * KY * w22)
    return invert_helmholtz_h(divdiv - divdiv[0, 0], 0.0, grid)


def qg_initial_data(u0, rho1: np.ndarray, eps: float, delta: Optional[float],
                    grid: Grid, m: float = 3.0) -> QGState:
    """Balanced initial state from 3D data ``u0 = (u1, u2, u3)`` and ``rho1``.

    Inputs are (nx, ny, nz) coefficient arrays (u1, u2, rho1 even). With
    ``delta`` given they are first passed through ``smooth_truncate``.
    Solves ``(Lap_h - omega^2) q~ = avg curl_h u_h - omega avg rho1`` with
    ``omega = eps**(m-1)``.
    """
    u1, u2 = u0[0], u0[1]
    if delta is not None:
        from .compressible_solver import smooth_truncate
        u1 = smooth_truncate(u1, delta, grid)
        u2 = smooth_truncate(u2, delta, grid)
        rho1 = smooth_truncate(rho1, delta, grid)
    omega = float(eps) ** (m - 1.0)
    KX, KY = grid.odd_wavenumbers2d()
    ub1 = vertical_average_array(u1, EVEN)
    ub2 = vertical_average_array(u2, EVEN)
    rb = vertical_average_array(rho1, EVEN)
    curl = 1j * KX * ub2 - 1j * KY * ub1
    pi = curl - omega * rb
    if omega == 0.0:
        pi = pi.copy()
        pi[0, 0] = 0.0
    return QGState(pi.astype(complex), omega, grid)


@dataclass(frozen=True)
class LimitRecord:
    t: float
    energy: float
    enstrophy: float
    maxvort: float


def diagnostics(state: State) -> LimitRecord:
    return LimitRecord(state.time, qg_energy(state), enstrophy(state), max_vorticity(state))


def stable_dt(state: State, cfl: float = CFL_LIMIT) -> float:
    """``cfl * dx / max|v|`` (infinite for a state at rest)."""
    _, psi, _ = _pv_and_stream(state)
    vmax = _max_speed(psi * state.grid.dealias_mask2d(), state.grid)
    if vmax == 0.0:
        return math.inf
    return cfl * min(state.grid.dx, state.grid.dy) / vmax


def step(state: State, dt: float, **kw) -> State:
    if isinstance(state, Vorticity2D):
        return euler_step(state, dt, **kw)
    return qg_step(state, dt, **kw)


def iterate(state: State, T: float, dt: Optional[float] = None, cfl: float = CFL_LIMIT,
            recompute_every: int = 10, filter_order: Optional[int] = None,
            max_dt: float = 0.05) -> Iterator[State]:
    """Yield states up to time ``state.time + T``.

    Without a fixed ``dt`` the step is ``cfl * dx / max|v|`` (capped at
    ``max_dt``), recomputed every ``recompute_every`` steps; the last step is
    shortened to land on the final time.
    """
    t_end = state.time + T
    n = 0
    h = dt
    while state.time < t_end - 1e-14 * max(1.0, abs(t_end)):
        if dt is None and n % recompute_every == 0:
            h = min(stable_dt(state, cfl), max_dt)
        hh = min(h, t_end - state.time)
        state = step(state, hh, cfl=cfl, filter_order=filter_order)
        n += 1
        yield state


def integrate(state: State, T: float, record_every: float = 0.0, **kw
              ) -> tuple[State, list[LimitRecord]]:
    """Run to ``state.time + T`` and collect diagnostics.

    Records are taken at the start, at the end and whenever at least
    ``record_every`` time has passed since the previous record.
    """
    records = [diagnostics(state)]
    last = state.time
    for state in iterate(state, T, **kw):
        if state.time - last >= record_every:
            records.append(diagnostics(state))
            last = state.time
    if records[-1].t != state.time:
        records.append(diagnostics(state))
    return state, records


def gaussian_dipole(grid: Grid, amplitude: float = 1.0, width: float = None,
                    separation: float = None) -> np.ndarray:
    """Physical values of a counter-rotating Gaussian vortex pair (zero mean)."""
    L = grid.L
    width = width or L / 12
    separation = separation or 3 * width
    X, Y = grid.mesh2d()
    cx, cy = L / 2, L / 2
    g = lambda dx_, dy_: np.exp(-((X - cx - dx_) ** 2 + (Y - cy - dy_) ** 2) / (2 * width ** 2))
    z = amplitude * (g(0.0, separation / 2) - g(0.0, -separation / 2))
    return z - z.mean()


__all__ = [
    "CFLError", "NumericalBlowupError", "Vorticity2D", "QGState", "euler_step", "qg_step",
    "qg_energy", "kinetic_energy", "enstrophy", "max_vorticity", "pressure",
    "qg_initial_data", "velocity_from_q", "velocity_from_stream", "integrate", "iterate",
    "diagnostics", "stable_dt", "LimitRecord", "gaussian_dipole", "spectral_filter", "step",
]
