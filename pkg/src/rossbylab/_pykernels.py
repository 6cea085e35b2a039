"""Pure numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is not built or ``ROSSBYLAB_PURE=1`` is set.
"""
from __future__ import annotations

import numpy as np

DEGENERATE_XI = 1e-8
DEGENERATE_GAP = 1e-10
ZERO_LAMBDA3 = 1e-12
PHASE_TOL = 1e-10

_SERIES_MAX = 8.0
_ASYMPTOTIC_MIN = 25.0
_TRAP_NODES = 64
_TRAP_SIN = np.sin(2.0 * np.pi * np.arange(1, _TRAP_NODES // 4) / _TRAP_NODES)
_ASYM_TERMS = 26


# ---------------------------------------------------------------------------
# Bessel functions of the first kind, orders 0 and 1


def _series(x: np.ndarray, order: int) -> np.ndarray:
    h = 0.25 * x * x
    term = np.ones_like(x) if order == 0 else 0.5 * x
    total = term.copy()
    for j in range(1, 40):
        term = -term * h / (j * (j + order))
        total += term
    return total


def _trapezoid(x: np.ndarray, order: int) -> np.ndarray:
    # J_n(x) = (1/2pi) int_0^{2pi} cos(n t - x sin t) dt; the N-node trapezoid rule
    # errs by about 2 J_N(x), below 1e-19 for N = 64, x < 25.  Folding the nodes
    # by the symmetries of sin leaves 16 distinct abscissae.
    xs = x[:, None] * _TRAP_SIN[None, :]
    if order == 0:
        return (2.0 + 4.0 * np.cos(xs).sum(axis=1) + 2.0 * np.cos(x)) / _TRAP_NODES
    return (4.0 * (_TRAP_SIN[None, :] * np.sin(xs)).sum(axis=1) + 2.0 * np.sin(x)) / _TRAP_NODES


def _asymptotic(x: np.ndarray, order: int) -> np.ndarray:
    mu = 4.0 * order * order
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    for kk in range(1, _ASYM_TERMS):
        term = term * (mu - (2 * kk - 1) ** 2) / (kk * 8.0 * x)
        if kk % 2 == 1:
            q += term if (kk // 2) % 2 == 0 else -term
        else:
            p += -term if (kk // 2) % 2 == 1 else term
        if np.max(np.abs(term)) < 1e-17:
            break
    chi = x - (0.5 * order + 0.25) * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j(order: int, x) -> np.ndarray:
    if order not in (0, 1):
        raise ValueError("only orders 0 and 1 are implemented")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xa = np.atleast_1d(x).ravel()
    sign = np.ones_like(xa)
    if order == 1:
        sign = np.where(xa < 0, -1.0, 1.0)
    ax = np.abs(xa)
    out = np.empty_like(ax)
    s = ax < _SERIES_MAX
    a = ax >= _ASYMPTOTIC_MIN
    m = ~(s | a)
    if s.any():
        out[s] = _series(ax[s], order)
    if m.any():
        out[m] = _trapezoid(ax[m], order)
    if a.any():
        out[a] = _asymptotic(ax[a], order)
    out *= sign
    if scalar:
        return float(out[0])
    return out.reshape(x.shape)


def bessel_j0(x):
    return bessel_j(0, x)


def bessel_j1(x):
    return bessel_j(1, x)


# ---------------------------------------------------------------------------
# closed-form spectral data of the 4x4 acoustic-Rossby mode matrix


def _lambda_parts(z, k, omega):
    k2 = k * k
    w2 = omega * omega
    s = w2 + z + k2
    disc = (w2 - k2) ** 2 + z * (z + 2.0 * (w2 + k2))
    rd = np.sqrt(np.maximum(disc, 0.0))
    lam1_sq = 0.5 * (s + rd)
    denom = s + rd
    lam3_sq = np.where(denom > 0, 2.0 * w2 * k2 / np.where(denom > 0, denom, 1.0), 0.0)
    return s, rd, lam1_sq, lam3_sq


def _diff_sq(lin, rd, z, c2):
    # (lin + rd)/2 evaluated without cancellation; rd^2 - lin^2 = 4 z c2
    pos = lin >= 0
    safe = np.where(pos, 1.0, rd - lin)
    safe = np.where(safe == 0, 1.0, safe)
    return np.where(pos, 0.5 * (lin + rd), 2.0 * z * c2 / safe)


def eigenvalues_closed(z, k, omega):
    """Return ``(lam1, lam2, lam3, lam4)`` for ``|xi|^2 = z``."""
    z = np.asarray(z, dtype=float)
    k = np.asarray(k, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _, _, l1s, l3s = _lambda_parts(z, k, omega)
    l1 = np.sqrt(l1s)
    l3 = np.sqrt(l3s)
    return l1, -l1, l3, -l3


def mode_eigensystem(xi1, xi2, k, omega):
    """Closed-form eigenpairs of A(xi, k, omega) for arrays of modes.

    Returns ``lam`` of shape (M, 4) ordered ``(lam1, lam2, lam3, lam4)``,
    ``vec`` of shape (M, 4, 4) with ``vec[m, :, j]`` the j-th normalised
    eigenvector, and a boolean ``degenerate`` mask for modes where the closed
    form is not used (the vectors there are left as NaN).
    """
    xi1 = np.atleast_1d(np.asarray(xi1, dtype=float)).ravel()
    xi2 = np.atleast_1d(np.asarray(xi2, dtype=float)).ravel()
    k = np.broadcast_to(np.asarray(k, dtype=float), xi1.shape).astype(float)
    omega = np.broadcast_to(np.asarray(omega, dtype=float), xi1.shape).astype(float)
    M = xi1.size
    z = xi1 * xi1 + xi2 * xi2
    k2 = k * k
    w2 = omega * omega
    _, rd, l1s, l3s = _lambda_parts(z, k, omega)
    l1 = np.sqrt(l1s)
    l3 = np.sqrt(l3s)
    lam = np.stack([l1, -l1, l3, -l3], axis=1)

    kzero = k == 0.0
    degenerate = (np.sqrt(z) < DEGENERATE_XI) | (l1 - l3 < DEGENERATE_GAP)
    degenerate |= (~kzero) & (l3 < ZERO_LAMBDA3)

    vec = np.full((M, 4, 4), np.nan + 0j)
    ok = ~degenerate
    zs = np.where(ok, z, 1.0)

    d1 = _diff_sq(w2 - k2 + z, rd, z, k2)          # lam1^2 - k^2
    e1 = _diff_sq(k2 - w2 + z, rd, z, w2)          # lam1^2 - omega^2
    l1s_safe = np.where(l1s > 0, l1s, 1.0)
    d3 = -k2 * e1 / l1s_safe                        # lam3^2 - k^2

    def branch(lmb, lsq, d):
        d = np.where(d == 0, 1.0, d)
        q = lsq * zs / d
        v1 = lmb * xi1 + 1j * omega * xi2
        v2 = lmb * xi2 - 1j * omega * xi1
        v3 = k * lmb * zs / d
        e = np.stack([q + 0j, v1, v2, v3 + 0j], axis=1)
        nrm = np.sqrt(np.sum(np.abs(e) ** 2, axis=1))
        nrm = np.where(nrm > 0, nrm, 1.0)
        return e / nrm[:, None]

    E1 = branch(l1, l1s, d1)
    E2 = branch(-l1, l1s, d1)
    E3 = branch(l3, l3s, d3)
    E4 = branch(-l3, l3s, d3)

    # k = 0: two-dimensional kernel spanned by geostrophic and vertical modes
    nz_k = np.sqrt(np.where(ok, z + w2, 1.0))
    K3 = np.stack([-1j * omega, -xi2 + 0j, xi1 + 0j, np.zeros(M, complex)], axis=1) / nz_k[:, None]
    K4 = np.zeros((M, 4), complex)
    K4[:, 3] = 1.0
    E3 = np.where(kzero[:, None], K3, E3)
    E4 = np.where(kzero[:, None], K4, E4)

    for j, E in enumerate((E1, E2, E3, E4)):
        vec[:, :, j] = np.where(ok[:, None], E, vec[:, :, j])
    vec[ok] = normalize_phase(vec[ok])
    return lam, vec, degenerate


def normalize_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate each column so its first non-negligible entry is real positive."""
    v = np.array(vec, dtype=complex, copy=True)
    mag = np.abs(v)
    big = mag > PHASE_TOL
    first = np.argmax(big, axis=-2)  # (..., 4)
    lead = np.take_along_axis(v, first[..., None, :], axis=-2)[..., 0, :]
    am = np.abs(lead)
    ph = np.where(am > 0, np.conj(lead) / np.where(am > 0, am, 1.0), 1.0)
    return v * ph[..., None, :]
