"""Oscillatory integrals, van Corput bounds and measured dispersive decay.

The kernel studied here is the inverse Fourier transform of a frequency
truncated wave group,

    I(t, r) = c_I * int exp(i s lam_j(z, k, omega) t) psi(sqrt z) J0(sqrt(z) r) dz,

with ``c_I = pi sqrt(2) / 2``.  Since ``int_{R^2} psi(|xi|) e^{i xi.x} dxi
= pi int psi(sqrt z) J0(sqrt(z) |x|) dz``, the same kernel equals
``(c_I / pi)`` times the plain 2D inverse transform; the tests use that
identity as an oracle.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from . import kernels
from .spectral_core import Grid, forward2d

KERNEL_PREFACTOR = math.pi * math.sqrt(2.0) / 2.0
# sup_x sqrt(x) |J0(x)|; the modulus sqrt(J0^2 + Y0^2) stays below sqrt(2/(pi x))
BESSEL_ENVELOPE = math.sqrt(2.0 / math.pi)

_GL_LO = np.polynomial.legendre.leggauss(16)
_GL_HI = np.polynomial.legendre.leggauss(32)


class QuadratureError(RuntimeError):
    def __init__(self, msg: str, achieved: float):
        super().__init__(f"{msg} (achieved relative error {achieved:.3e})")
        self.achieved = achieved


class PhaseError(ValueError):
    """Phase derivative vanishes identically (branch 3 with k = 0)."""


class AliasingWarning(UserWarning):
    pass


def bessel_j(order: int, x):
    """Bessel function of the first kind, order 0 or 1 (compiled kernel when built)."""
    return kernels.bessel_j(order, x)


# ---------------------------------------------------------------------------
# frequency cut-off


def _bump(x):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _dbump(x):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


def _step(x):
    """Smooth step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, float), -1.0, 2.0)
    f, g = _bump(x), _bump(1.0 - x)
    return f / (f + g)


def _dstep(x):
    x = np.clip(np.asarray(x, float), -1.0, 2.0)
    f, g = _bump(x), _bump(1.0 - x)
    df, dg = _dbump(x), _dbump(1.0 - x)
    den = (f + g) ** 2
    return (df * g + f * dg) / den


@dataclass(frozen=True)
class CutoffProfile:
    """Smooth bump in ``z = |xi|^2``: supported in [a, b], equal to 1 on the middle half."""

    a: float
    b: float

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise ValueError(f"need 0 < a < b, got ({self.a}, {self.b})")

    @property
    def ramp(self) -> float:
        return 0.25 * (self.b - self.a)

    def of_z(self, z):
        """``psi(sqrt z)``."""
        z = np.asarray(z, float)
        q = self.ramp
        return _step((z - self.a) / q) * _step((self.b - z) / q)

    def dz(self, z):
        """``d/dz psi(sqrt z)``."""
        z = np.asarray(z, float)
        q = self.ramp
        up, dn = (z - self.a) / q, (self.b - z) / q
        return (_dstep(up) * _step(dn) - _step(up) * _dstep(dn)) / q

    def __call__(self, r):
        """``psi(r)`` as a function of the radius ``r = |xi|``."""
        r = np.asarray(r, float)
        return self.of_z(r * r)

    def integral(self, weight=None) -> float:
        """``int_a^b psi(sqrt z) w(z) dz`` by Gauss-Legendre panels."""
        z, w = _panel_nodes(np.linspace(self.a, self.b, 65), _GL_HI)
        vals = self.of_z(z)
        if weight is not None:
            vals = vals * weight(z)
        return float(np.sum(vals * w))


def _pair_nodes(lo, hi, rule):
    """Nodes and weights, shape (panels, n), for panels [lo_i, hi_i]."""
    x, w = rule
    half = 0.5 * (hi - lo)[:, None]
    return 0.5 * (lo + hi)[:, None] + half * x[None, :], half * w[None, :]


def _panel_nodes(edges, rule):
    x, w = rule
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    z = (0.5 * (lo + hi) + half * x[None, :]).ravel()
    wt = (half * w[None, :]).ravel()
    return z, wt


# ---------------------------------------------------------------------------
# phases


def branch_lambda(z, k: float, omega: float, branch: int):
    l1, l2, l3, l4 = kernels.eigenvalues_closed(z, k, omega)
    return (l1, l2, l3, l4)[branch - 1]


def phase_derivative(z, k: float, omega: float, branch: int):
    """``d lam_j / dz``; equals ``beta_j / (2 lam_j)`` written without cancellation.

    With ``S = omega^2 + z + k^2`` and ``D = S^2 - 4 omega^2 k^2`` one has
    ``d lam1/dz = lam1 / (2 sqrt D)`` and ``d lam3/dz = -lam3 / (2 sqrt D)``.
    """
    if branch not in (1, 2, 3, 4):
        raise ValueError("branch must be 1, 2, 3 or 4")
    if branch in (3, 4) and k == 0:
        raise PhaseError("lam3 vanishes identically for k = 0")
    z = np.asarray(z, float)
    w2, k2 = omega * omega, k * k
    rd = np.sqrt(np.maximum((w2 - k2) ** 2 + z * (z + 2.0 * (w2 + k2)), 0.0))
    lam = branch_lambda(z, k, omega, 1 if branch in (1, 2) else 3)
    d = lam / (2.0 * rd)
    if branch == 1:
        return d
    if branch == 2:
        return -d
    return -d if branch == 3 else d


def beta_factor(z, k: float, omega: float, branch: int):
    """``beta_1`` or ``beta_3`` as printed: ``(1 +- S / sqrt(S^2 - 4 w^2 k^2)) / 2``."""
    z = np.asarray(z, float)
    s = omega * omega + z + k * k
    rd = np.sqrt(s * s - 4.0 * omega * omega * k * k)
    return 0.5 * (1.0 + s / rd) if branch == 1 else 0.5 * (1.0 - s / rd)


def lambda3_slope_lower_bound(b: float, k: float, omega: float) -> float:
    """``|d lam3/dz|`` at ``z = b``, the minimum over [a, b], in closed form.

    ``omega |k| / (sqrt(2) sqrt(D) sqrt(S + sqrt D))``; it is bounded below
    by a constant times ``omega`` for ``omega`` in (0, 1).
    """
    s = omega * omega + b + k * k
    rd = math.sqrt(s * s - 4.0 * omega * omega * k * k)
    return omega * abs(k) / (math.sqrt(2.0) * rd * math.sqrt(s + rd))


# ---------------------------------------------------------------------------
# oscillatory integrals


def oscillatory_integral(phase, amplitude, a: float, b: float, t: float,
                         rtol: float = 1e-8, n_panels: int | None = None,
                         max_refine: int = 12) -> complex:
    """``int_a^b exp(i t phase(z)) amplitude(z) dz`` by adaptive Gauss-Legendre panels.

    Panels start small enough that the phase turns by at most ``pi`` on each;
    a 16/32-point pair estimates the error and failing panels are bisected.
    """
    if n_panels is None:
        probe = np.linspace(a, b, 257)
        turn = t * np.sum(np.abs(np.diff(phase(probe))))
        n_panels = int(min(max(8, math.ceil(turn / math.pi)), 200000))
    edges = np.linspace(a, b, n_panels + 1)

    def f(z):
        return np.exp(1j * t * phase(z)) * amplitude(z)

    total = 0.0 + 0.0j
    scale = 0.0
    err_total = 0.0
    lo, hi = edges[:-1], edges[1:]
    for _ in range(max_refine + 1):
        zl, wl = _pair_nodes(lo, hi, _GL_LO)
        zh, wh = _pair_nodes(lo, hi, _GL_HI)
        vl = np.sum(f(zl) * wl, axis=1)
        fh = f(zh) * wh
        vh = np.sum(fh, axis=1)
        scale += float(np.sum(np.abs(fh)))
        err = np.abs(vh - vl)
        tol = max(rtol * abs(total + vh.sum()), 1e-15 * scale)
        ok = err <= tol / math.sqrt(max(1, len(err)))
        total += vh[ok].sum()
        err_total += float(err[ok].sum())
        if ok.all():
            return complex(total)
        mid = 0.5 * (lo[~ok] + hi[~ok])
        lo, hi = np.concatenate([lo[~ok], mid]), np.concatenate([mid, hi[~ok]])
    achieved = (err_total + float(np.sum(err[~ok]))) / max(abs(total), 1e-300)
    raise QuadratureError("oscillatory quadrature did not converge", achieved)


def oscillatory_kernel(t: float, r_h: float, k: float, omega: float, branch: int,
                       psi: CutoffProfile, sign: int = 1, rtol: float = 1e-8) -> complex:
    """``c_I int exp(i sign lam_j t) psi(sqrt z) J0(sqrt(z) r_h) dz``."""
    if t < 0 or r_h < 0:
        raise ValueError("need t >= 0 and r_h >= 0")

    def phase(z):
        return sign * branch_lambda(z, k, omega, branch)

    def amp(z):
        return psi.of_z(z) * kernels.bessel_j0(np.sqrt(z) * r_h)

    # J0 oscillates too: add panels for its sqrt(z) r_h phase
    extra = math.ceil(r_h * (math.sqrt(psi.b) - math.sqrt(psi.a)) / math.pi)
    probe = np.linspace(psi.a, psi.b, 257)
    turn = t * np.sum(np.abs(np.diff(phase(probe))))
    n = int(max(8, math.ceil(turn / math.pi)) + 2 * extra)
    return KERNEL_PREFACTOR * oscillatory_integral(phase, amp, psi.a, psi.b, t, rtol, n)


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class VanCorputBound:
    lambda0: float
    bound: float
    variation: float


def amplitude_variation(psi: CutoffProfile, r_h: float) -> tuple[float, float]:
    """``(|Phi(b)|, int_a^b |Phi'| dz)`` for ``Phi(z) = psi(sqrt z) J0(sqrt(z) r_h)``."""
    npan = 64 + 4 * math.ceil(r_h * math.sqrt(psi.b))
    z, w = _panel_nodes(np.linspace(psi.a, psi.b, npan + 1), _GL_HI)
    sz = np.sqrt(z)
    dphi = (psi.dz(z) * kernels.bessel_j0(sz * r_h)
            - psi.of_z(z) * kernels.bessel_j1(sz * r_h) * r_h / (2.0 * sz))
    phib = float(np.abs(psi.of_z(psi.b) * kernels.bessel_j0(math.sqrt(psi.b) * r_h)))
    return phib, float(np.sum(np.abs(dphi) * w))


def van_corput_bound(psi: CutoffProfile, k: float, omega: float, t: float, branch: int,
                     r_h: float = 0.0) -> VanCorputBound:
    """Right side of van Corput's estimate without the absolute constant.

    Returns ``lambda0 = min |d lam_j/dz|`` on [a, b] (an endpoint, by
    monotonicity of the derivative) and
    ``bound = c_I (|Phi(b)| + int |Phi'|) / (t lambda0)``.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    ends = np.abs(phase_derivative(np.array([psi.a, psi.b]), k, omega, branch))
    lam0 = float(ends.min())
    if not lam0 > 0:
        raise PhaseError("phase derivative vanishes on the support")
    phib, var = amplitude_variation(psi, r_h)
    return VanCorputBound(lam0, KERNEL_PREFACTOR * (phib + var) / (t * lam0), phib + var)


def van_corput_ratio(value: complex, vc: VanCorputBound) -> float:
    return abs(value) / vc.bound if vc.bound > 0 else math.inf


def far_field_constant(psi: CutoffProfile) -> float:
    """``c(psi)`` with ``|I(t, r)| <= c(psi) r^{-1/2}`` from the J0 envelope."""
    return KERNEL_PREFACTOR * BESSEL_ENVELOPE * psi.integral(lambda z: z ** -0.25)


def far_field_bound(t: float, beta: float, psi: CutoffProfile) -> float:
    """``c(psi) t^{-beta/2}``: the kernel bound in the region ``|x_h| > t^beta``."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    return far_field_constant(psi) * t ** (-beta / 2.0)


def decay_envelope(t, omega: float, beta: float):
    """``max{1/(omega t^{1-beta/2}), t^{-beta/2}}``."""
    t = np.asarray(t, float)
    return np.maximum(1.0 / (omega * t ** (1.0 - beta / 2.0)), t ** (-beta / 2.0))


# ---------------------------------------------------------------------------
# measured decay on the torus


@dataclass(frozen=True)
class DecayRecord:
    t: float
    p: float
    k: float
    omega: float
    beta: float
    norm: float
    bound: float
    ratio: float
    branch: int = 1


def lp_norm(values: np.ndarray, p: float, grid: Grid) -> float:
    a = np.abs(values)
    if math.isinf(p):
        return float(a.max())
    return float((np.sum(a ** p) * grid.dx * grid.dy) ** (1.0 / p))


def conjugate_exponent(p: float) -> float:
    if math.isinf(p):
        return 1.0
    if p == 1:
        return math.inf
    return p / (p - 1.0)


def wave_group(h: np.ndarray, grid: Grid, psi: CutoffProfile, k: float, omega: float,
               branch: int, sign: int = 1):
    """Return ``Z(t)`` as a callable: ``F^{-1}[exp(i sign lam_j t) psi hhat]``."""
    KX, KY = grid.wavenumbers2d()
    z = KX ** 2 + KY ** 2
    hat = forward2d(h) * psi.of_z(z)
    lam = sign * branch_lambda(z, k, omega, branch)
    n = grid.nx * grid.ny

    def Z(t: float) -> np.ndarray:
        return np.fft.ifft2(np.exp(1j * lam * t) * hat) * n

    return Z


def decay_sweep(h: np.ndarray, k: float, omega: float, times, p: float, beta: float,
                grid: Grid, psi: CutoffProfile, branch: int = 1, sign: int = 1,
                fit_until: float | None = None) -> list[DecayRecord]:
    """Measured ``||Z(t)||_{L^p}`` against ``C env(t)^{1-2/p} ||h||_{L^{p'}}``.

    ``C`` is the largest ratio over the fitting window ``t <= fit_until``
    (default: the first decade, ``10 * times[0]``).  Rows after the window
    therefore test the bound with a constant fixed beforehand.
    """
    times = np.asarray(times, float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be positive and increasing")
    if p < 2:
        raise ValueError("p must be >= 2")
    kmax = min(np.abs(grid.kx).max(), np.abs(grid.ky).max()) * 2.0 / 3.0
    if math.sqrt(psi.b) > 0.9 * kmax:
        warnings.warn(f"cut-off support |xi| <= {math.sqrt(psi.b):.3g} reaches the dealias "
                      f"radius {kmax:.3g}", AliasingWarning, stacklevel=2)
    Z = wave_group(h, grid, psi, k, omega, branch, sign)
    hnorm = lp_norm(h, conjugate_exponent(p), grid)
    expo = 1.0 if math.isinf(p) else 1.0 - 2.0 / p
    env = decay_envelope(times, omega, beta) ** expo * hnorm
    norms = np.array([lp_norm(Z(t), p, grid) for t in times])
    if fit_until is None:
        fit_until = 10.0 * times[0]
    win = times <= fit_until * (1 + 1e-12)
    C = float(np.max(norms[win] / env[win]))
    out = []
    for t, nm, e in zip(times, norms, env):
        bd = C * e
        out.append(DecayRecord(float(t), float(p), float(k), float(omega), float(beta),
                               float(nm), float(bd), float(nm / bd) if bd > 0 else math.inf,
                               branch))
    return out


def fit_loglog_slope(t, y) -> float:
    """Least-squares slope of ``log y`` against ``log t``."""
    lt, ly = np.log(np.asarray(t, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lt, ly, 1)[0])


# ---------------------------------------------------------------------------
# radial wave groups on the whole plane (no periodic wrap-around)


@dataclass(frozen=True)
class RadialGaussian:
    """``h(x) = exp(-|x|^2 / (2 sigma^2))`` on R^2."""

    sigma: float = 1.0

    def hat_z(self, z):
        """Fourier transform ``int h e^{-i xi.x} dx`` at ``|xi|^2 = z``."""
        s2 = self.sigma ** 2
        return 2.0 * math.pi * s2 * np.exp(-0.5 * s2 * np.asarray(z, float))

    def lp_norm(self, q: float) -> float:
        if math.isinf(q):
            return 1.0
        return (2.0 * math.pi * self.sigma ** 2 / q) ** (1.0 / q)


def dispersion_time(psi: CutoffProfile, k: float, omega: float, branch: int) -> float:
    """``1 / (|lam'(a) - lam'(b)| (b - a))``: when the support starts to spread."""
    d = phase_derivative(np.array([psi.a, psi.b]), k, omega, branch)
    return 1.0 / (abs(d[0] - d[1]) * (psi.b - psi.a))


def group_speed(psi: CutoffProfile, k: float, omega: float, branch: int) -> float:
    """Largest ``|d lam / d|xi||`` on the support."""
    z = np.linspace(psi.a, psi.b, 129)
    return float(np.max(2.0 * np.sqrt(z) * np.abs(phase_derivative(z, k, omega, branch))))


def radial_wave_group(t: float, r, h: RadialGaussian, psi: CutoffProfile, k: float,
                      omega: float, branch: int, sign: int = 1, chunk: int = 2048):
    """``Z(t, r) = (1/4 pi) int exp(i sign lam_j t) psi hhat J0(sqrt(z) r) dz`` on R^2."""
    r = np.asarray(r, float)
    probe = np.linspace(psi.a, psi.b, 257)
    lam = sign * branch_lambda(probe, k, omega, branch)
    turn = t * np.sum(np.abs(np.diff(lam))) + r.max() * (math.sqrt(psi.b) - math.sqrt(psi.a))
    # 32 Gauss nodes resolve a full turn of the phase per panel to round-off
    npan = int(max(16, math.ceil(turn / (2.0 * math.pi))))
    z, w = _panel_nodes(np.linspace(psi.a, psi.b, npan + 1), _GL_HI)
    amp = (np.exp(1j * t * sign * branch_lambda(z, k, omega, branch))
           * psi.of_z(z) * h.hat_z(z) * w / (4.0 * math.pi))
    sz = np.sqrt(z)
    out = np.empty(r.shape, complex)
    flat = r.ravel()
    res = out.reshape(-1)
    for i in range(0, flat.size, chunk):
        rr = flat[i:i + chunk]
        res[i:i + chunk] = kernels.bessel_j0(np.outer(rr, sz)) @ amp
    return out


def radial_lp_norm(t: float, p: float, h: RadialGaussian, psi: CutoffProfile, k: float,
                   omega: float, branch: int, sign: int = 1) -> float:
    """``||Z(t)||_{L^p(R^2)}`` by sampling out past the wave front."""
    reach = group_speed(psi, k, omega, branch) * t + 12.0 * h.sigma + 40.0 / math.sqrt(psi.a)
    if math.isinf(p):
        # quarter-wavelength sampling, then refine around the largest local maxima
        dr = math.pi / (4.0 * math.sqrt(psi.b))
        r = np.arange(0.0, reach, dr)
        Z = np.abs(radial_wave_group(t, r, h, psi, k, omega, branch, sign))
        best = Z.max()
        for i in np.argsort(Z)[-3:]:
            fine = np.linspace(r[max(i - 1, 0)], r[min(i + 1, r.size - 1)], 41)
            best = max(best, np.abs(radial_wave_group(t, fine, h, psi, k, omega, branch,
                                                      sign)).max())
        return float(best)
    # integral norms feel the slowly decaying tails of the smooth cut-off: reach further
    reach += 160.0 / math.sqrt(psi.a)
    dr = math.pi / (32.0 * math.sqrt(psi.b))
    r = np.arange(0.0, reach, dr)
    Z = np.abs(radial_wave_group(t, r, h, psi, k, omega, branch, sign))
    return float(simpson(Z ** p * 2.0 * math.pi * r, x=r) ** (1.0 / p))


def decay_sweep_radial(h: RadialGaussian, k: float, omega: float, times, p: float,
                       beta: float, psi: CutoffProfile, branch: int = 1, sign: int = 1,
                       fit_until: float | None = None) -> list[DecayRecord]:
    """Whole-plane version of :func:`decay_sweep` for radially symmetric data."""
    times = np.asarray(times, float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be positive and increasing")
    expo = 1.0 if math.isinf(p) else 1.0 - 2.0 / p
    env = decay_envelope(times, omega, beta) ** expo * h.lp_norm(conjugate_exponent(p))
    norms = np.array([radial_lp_norm(t, p, h, psi, k, omega, branch, sign) for t in times])
    if fit_until is None:
        fit_until = 10.0 * times[0]
    win = times <= fit_until * (1 + 1e-12)
    C = float(np.max(norms[win] / env[win]))
    return [DecayRecord(float(t), float(p), float(k), float(omega), float(beta), float(nm),
                        float(C * e), float(nm / (C * e)), branch)
            for t, nm, e in zip(times, norms, env)]
