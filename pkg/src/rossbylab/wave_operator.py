"""Acoustic-Rossby wave operator: mode matrix, eigenbasis, exact propagator.

In the cosine/sine vertical basis of :mod:`rossbylab.spectral_core` the
linear system ``ds/dt + div V = 0``, ``dV/dt + omega f x V + grad s = 0``
decouples into one 4x4 system per mode ``(xi, kappa)``:

    dY/dt + i A(xi, k, omega) Y = 0,   k = kappa * pi,
    Y = (s_hat, V1_hat, V2_hat, -i * V3_hat),

where ``V3_hat`` is the sine coefficient of the vertical velocity.  The
factor ``-i`` turns the real sine/cosine coupling into the Hermitian matrix

    A = [[0,   xi1,   xi2,  k],
         [xi1, 0,     i w,  0],
         [xi2, -i w,  0,    0],
         [k,   0,     0,    0]].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .spectral_core import EVEN, ODD, Grid, SpectralField, vertical_average_array


class DegenerateModeError(ValueError):
    """Closed-form eigenvectors are not available for this mode."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenSystem:
    """Eigenpairs ordered ``(lam1, lam2, lam3, lam4)``; ``vectors[:, j]`` is E_j."""

    lambdas: np.ndarray
    vectors: np.ndarray
    degenerate: bool = False

    def residual(self, A: np.ndarray) -> float:
        R = A @ self.vectors - self.vectors * self.lambdas[None, :]
        return float(np.max(np.abs(R)))

    def identity_error(self) -> float:
        G = self.vectors.conj().T @ self.vectors
        return float(np.max(np.abs(G - np.eye(4))))


def assemble_mode_matrix(xi, k: float, omega: float) -> np.ndarray:
    xi1, xi2 = float(xi[0]), float(xi[1])
    A = np.zeros((4, 4), dtype=complex)
    A[0, 1] = A[1, 0] = xi1
    A[0, 2] = A[2, 0] = xi2
    A[0, 3] = A[3, 0] = k
    A[1, 2] = 1j * omega
    A[2, 1] = -1j * omega
    return A


def mode_matrices(xi1, xi2, k, omega) -> np.ndarray:
    """Stack of mode matrices, shape ``(M, 4, 4)``."""
    xi1 = np.atleast_1d(np.asarray(xi1, float))
    xi2 = np.broadcast_to(np.asarray(xi2, float), xi1.shape)
    k = np.broadcast_to(np.asarray(k, float), xi1.shape)
    omega = np.broadcast_to(np.asarray(omega, float), xi1.shape)
    A = np.zeros(xi1.shape + (4, 4), dtype=complex)
    A[..., 0, 1] = A[..., 1, 0] = xi1
    A[..., 0, 2] = A[..., 2, 0] = xi2
    A[..., 0, 3] = A[..., 3, 0] = k
    A[..., 1, 2] = 1j * omega
    A[..., 2, 1] = -1j * omega
    return A


def eigenvalues_closed(xi2: float, k: float, omega: float):
    """``(lam1, lam2, lam3, lam4)`` as functions of ``|xi|^2``."""
    return kernels.eigenvalues_closed(xi2, k, omega)


# ---------------------------------------------------------------------------
# generic Hermitian eigensolver (cyclic Jacobi) used as independent oracle


def jacobi_eigh(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of a small Hermitian matrix by cyclic Jacobi sweeps.

    Returns eigenvalues sorted in descending order and the matching
    orthonormal eigenvectors as columns.
    """
    a = np.array(A, dtype=complex, copy=True)
    n = a.shape[0]
    if not np.allclose(a, a.conj().T, atol=1e-14 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix is not Hermitian")
    v = np.eye(n, dtype=complex)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(a - np.diag(np.diag(a))) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-300:
                    continue
                phase = apq / mag
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                U = np.eye(n, dtype=complex)
                U[p, p] = c
                U[q, q] = c
                U[p, q] = s * phase
                U[q, p] = -s * np.conj(phase)
                a = U.conj().T @ a @ U
                v = v @ U
    else:
        off = np.sqrt(np.sum(np.abs(a - np.diag(np.diag(a))) ** 2))
        if off > 1e3 * tol * scale:
            raise ConvergenceError(f"Jacobi iteration did not converge, off-norm {off:.3e}")
    w = np.real(np.diag(a))
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def eigenvalues_oracle(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of a Hermitian matrix, sorted descending (Jacobi method)."""
    w, _ = jacobi_eigh(A)
    return w


def eigenbasis_numeric(A: np.ndarray) -> EigenSystem:
    """Orthonormal eigenbasis by the Jacobi method, in ``(lam1, lam2, lam3, lam4)`` order."""
    w, v = jacobi_eigh(A)
    # descending w0 >= w1 >= w2 >= w3  ->  lam1 = w0, lam2 = w3, lam3 = w1, lam4 = w2
    perm = [0, 3, 1, 2]
    vec = kernels.normalize_phase(v[:, perm])
    return EigenSystem(w[perm], vec, degenerate=True)


def eigenbasis_closed(xi, k: float, omega: float) -> EigenSystem:
    lam, vec, deg = kernels.mode_eigensystem([xi[0]], [xi[1]], k, omega)
    if deg[0]:
        raise DegenerateModeError(
            f"closed-form eigenbasis unavailable at xi={tuple(xi)}, k={k}, omega={omega}")
    return EigenSystem(lam[0], vec[0], degenerate=False)


def eigenbasis(xi, k: float, omega: float) -> EigenSystem:
    """Closed form where available, Jacobi fallback otherwise."""
    try:
        return eigenbasis_closed(xi, k, omega)
    except DegenerateModeError:
        return eigenbasis_numeric(assemble_mode_matrix(xi, k, omega))


def propagate_mode(state: np.ndarray, t: float, eig: EigenSystem) -> np.ndarray:
    """``Y(t) = sum_j exp(-i lam_j t) <E_j, Y(0)> E_j``."""
    E = eig.vectors
    c = E.conj().T @ np.asarray(state, dtype=complex)
    return E @ (np.exp(-1j * eig.lambdas * t) * c)


# ---------------------------------------------------------------------------
# fields


@dataclass
class SpectralState4:
    """Coefficients of ``(s, V1, V2, V3)``: s, V1, V2 even, V3 odd."""

    s: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    V3: np.ndarray
    grid: Grid
    omega: float

    @classmethod
    def zeros(cls, grid: Grid, omega: float) -> "SpectralState4":
        z = lambda: np.zeros(grid.shape, complex)  # noqa: E731
        return cls(z(), z(), z(), z(), grid, omega)

    def copy(self) -> "SpectralState4":
        return SpectralState4(self.s.copy(), self.V1.copy(), self.V2.copy(), self.V3.copy(),
                              self.grid, self.omega)

    def fields(self):
        return (SpectralField(self.s, EVEN, self.grid), SpectralField(self.V1, EVEN, self.grid),
                SpectralField(self.V2, EVEN, self.grid), SpectralField(self.V3, ODD, self.grid))

    def __add__(self, o: "SpectralState4") -> "SpectralState4":
        return SpectralState4(self.s + o.s, self.V1 + o.V1, self.V2 + o.V2, self.V3 + o.V3,
                              self.grid, self.omega)

    def __sub__(self, o: "SpectralState4") -> "SpectralState4":
        return SpectralState4(self.s - o.s, self.V1 - o.V1, self.V2 - o.V2, self.V3 - o.V3,
                              self.grid, self.omega)


def state_inner(a: SpectralState4, b: SpectralState4) -> float:
    """L2(Omega) x L2(Omega; R^3) inner product."""
    g = a.grid
    we = g.vertical_weights(EVEN)
    wo = g.vertical_weights(ODD)
    tot = np.sum(we * np.real(np.conj(a.s) * b.s + np.conj(a.V1) * b.V1 + np.conj(a.V2) * b.V2))
    tot += np.sum(wo * np.real(np.conj(a.V3) * b.V3))
    return float(g.volume * tot)


def state_norm(a: SpectralState4) -> float:
    return float(np.sqrt(max(state_inner(a, a), 0.0)))


def to_modes(state: SpectralState4) -> np.ndarray:
    """Per-mode 4-vectors, shape ``(nx*ny*nz, 4)``."""
    Y = np.stack([state.s, state.V1, state.V2, -1j * state.V3], axis=-1)
    return Y.reshape(-1, 4)


def from_modes(Y: np.ndarray, grid: Grid, omega: float) -> SpectralState4:
    Y = Y.reshape(grid.shape + (4,))
    V3 = 1j * Y[..., 3]
    V3[..., 0] = 0.0
    return SpectralState4(Y[..., 0].copy(), Y[..., 1].copy(), Y[..., 2].copy(), V3, grid, omega)


@dataclass
class WavePropagator:
    """Cached per-mode eigensystems for one ``(grid, omega)``."""

    grid: Grid
    omega: float
    lambdas: np.ndarray = field(init=False, repr=False)
    vectors: np.ndarray = field(init=False, repr=False)
    degenerate_count: int = field(init=False, default=0)

    def __post_init__(self):
        KX, KY, KZ = self.grid.odd_wavenumbers()
        lam, vec, deg = kernels.mode_eigensystem(KX.ravel(), KY.ravel(), KZ.ravel(), self.omega)
        idx = np.flatnonzero(deg)
        for m in idx:
            A = assemble_mode_matrix((KX.flat[m], KY.flat[m]), KZ.flat[m], self.omega)
            e = eigenbasis_numeric(A)
            lam[m] = e.lambdas
            vec[m] = e.vectors
        self.lambdas = lam
        self.vectors = vec
        self.degenerate_count = int(idx.size)

    def coefficients(self, state: SpectralState4) -> np.ndarray:
        """Eigen-coordinates ``c_j = <E_j, Y>`` per mode, shape (M, 4)."""
        return np.einsum("mij,mi->mj", self.vectors.conj(), to_modes(state))

    def from_coefficients(self, c: np.ndarray, t: float) -> SpectralState4:
        Y = np.einsum("mij,mj->mi", self.vectors, np.exp(-1j * self.lambdas * t) * c)
        return from_modes(Y, self.grid, self.omega)

    def evolve(self, state: SpectralState4, t: float) -> SpectralState4:
        return self.from_coefficients(self.coefficients(state), t)


def evolve(state: SpectralState4, t: float, propagator: WavePropagator | None = None):
    """Exact solution of the rescaled wave system at time ``t``."""
    if propagator is None:
        propagator = WavePropagator(state.grid, state.omega)
    return propagator.evolve(state, t)


def apply_B(state: SpectralState4) -> SpectralState4:
    """``B(omega)(s, V) = (div V, omega f x V + grad s)`` evaluated spectrally."""
    g = state.grid
    KX, KY, KZ = g.odd_wavenumbers()
    w = state.omega
    div = 1j * KX * state.V1 + 1j * KY * state.V2 + KZ * state.V3
    b1 = -w * state.V2 + 1j * KX * state.s
    b2 = w * state.V1 + 1j * KY * state.s
    b3 = -KZ * state.s
    return SpectralState4(div, b1, b2, b3, g, w)


def kernel_project(r: np.ndarray, U, omega: float, grid: Grid):
    """Orthogonal projection onto the kernel of ``B(omega)``.

    ``r`` is an even coefficient array, ``U = (U1, U2, U3)`` the velocity
    coefficients.  Returns ``(q, v1, v2)`` as horizontal ``(nx, ny)``
    coefficient arrays; ``v = grad_perp q / omega`` and ``v3 = 0``.
    """
    if not omega > 0:
        raise ValueError("kernel projection requires omega > 0")
    U1, U2 = U[0], U[1]
    KX, KY = grid.odd_wavenumbers2d()
    u1 = vertical_average_array(U1, EVEN)
    u2 = vertical_average_array(U2, EVEN)
    curl = 1j * KX * u2 - 1j * KY * u1
    rbar = vertical_average_array(r, EVEN)
    # the Nyquist-consistent symbol |xi|^2 = -(i xi)(i xi) keeps the projection idempotent
    q = (omega * omega * rbar - omega * curl) / (KX ** 2 + KY ** 2 + omega * omega)
    v1 = -1j * KY * q / omega
    v2 = 1j * KX * q / omega
    return q, v1, v2


def kernel_state(q: np.ndarray, v1: np.ndarray, v2: np.ndarray, grid: Grid,
                 omega: float) -> SpectralState4:
    """Embed horizontal kernel data as a 3D state (vertical mode 0 only)."""
    st = SpectralState4.zeros(grid, omega)
    st.s[..., 0] = q
    st.V1[..., 0] = v1
    st.V2[..., 0] = v2
    return st


def kernel_condition_residual(q, v1, v2, omega: float, grid: Grid) -> float:
    """max |omega f x v + grad q| over the coefficients."""
    KX, KY = grid.odd_wavenumbers2d()
    r1 = -omega * v2 + 1j * KX * q
    r2 = omega * v1 + 1j * KY * q
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


# ---------------------------------------------------------------------------
# multiplier bounds


_MULTI_INDICES = {0: [(0, 0)], 1: [(1, 0), (0, 1)], 2: [(2, 0), (1, 1), (0, 2)]}


@dataclass
class MultiplierReport:
    order: int
    sup: float
    per_omega: dict
    excluded: int
    samples: int


def _vectors_at(xi1, xi2, k, omega):
    lam, vec, deg = kernels.mode_eigensystem(xi1, xi2, k, omega)
    return vec, deg


def multiplier_sup_check(a: float, b: float, k: float, order: int, omega_samples,
                         xi_samples=24, h: float | None = None) -> MultiplierReport:
    """Sampled sup of ``|d^A E_j / d xi^A|`` over ``a <= |xi| <= b``.

    ``xi_samples`` is either a count (a polar lattice is generated) or an
    explicit ``(n, 2)`` array.  Derivatives are central differences.
    """
    if not (0 < a < b):
        raise ValueError("need 0 < a < b")
    if order not in _MULTI_INDICES:
        raise ValueError("derivative order must be 0, 1 or 2")
    if np.isscalar(xi_samples):
        n = int(xi_samples)
        rr = np.linspace(a, b, n)
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        R, T = np.meshgrid(rr, th, indexing="ij")
        pts = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    else:
        pts = np.asarray(xi_samples, float).reshape(-1, 2)
    if h is None:
        h = 1e-4 if order == 1 else 2e-3
    per = {}
    excluded = 0
    for w in omega_samples:
        best = 0.0
        x1, x2 = pts[:, 0], pts[:, 1]
        _, deg0 = _vectors_at(x1, x2, k, w)
        for A in _MULTI_INDICES[order]:
            d = _finite_difference(x1, x2, k, w, A, h)
            # a derivative sample is valid only if every stencil point is nondegenerate
            bad = deg0 | ~np.all(np.isfinite(d.reshape(d.shape[0], -1)), axis=1)
            norms = np.sqrt(np.sum(np.abs(d) ** 2, axis=1))  # per eigenvector column
            if np.any(~bad):
                best = max(best, float(np.max(norms[~bad])))
            excluded += int(np.sum(bad))
        per[float(w)] = best
    return MultiplierReport(order, max(per.values()) if per else 0.0, per, excluded,
                            pts.shape[0] * len(per))


def _finite_difference(x1, x2, k, w, A, h):
    a1, a2 = A
    if a1 == 0 and a2 == 0:
        v, _ = _vectors_at(x1, x2, k, w)
        return v
    if a1 + a2 == 1:
        e = np.array([a1, a2], float) * h
        vp, _ = _vectors_at(x1 + e[0], x2 + e[1], k, w)
        vm, _ = _vectors_at(x1 - e[0], x2 - e[1], k, w)
        return (vp - vm) / (2 * h)
    if a1 == 2 or a2 == 2:
        e = np.array([a1 // 2, a2 // 2], float) * h
        vp, _ = _vectors_at(x1 + e[0], x2 + e[1], k, w)
        v0, _ = _vectors_at(x1, x2, k, w)
        vm, _ = _vectors_at(x1 - e[0], x2 - e[1], k, w)
        return (vp - 2 * v0 + vm) / (h * h)
    vpp, _ = _vectors_at(x1 + h, x2 + h, k, w)
    vpm, _ = _vectors_at(x1 + h, x2 - h, k, w)
    vmp, _ = _vectors_at(x1 - h, x2 + h, k, w)
    vmm, _ = _vectors_at(x1 - h, x2 - h, k, w)
    return (vpp - vpm - vmp + vmm) / (4 * h * h)
