"""Executable acceptance checks shared by the test-suite and the command line.

Each check returns a :class:`CriterionResult` carrying a pass flag, the
measured quantities and a one-line summary.  Runtime limits are part of the
checks.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import compressible_solver as cs
from . import dispersion_lab as dl
from . import limit_solvers as ls
from . import spectral_core as sc
from . import wave_operator as wo


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    metrics: dict
    runtime: float = 0.0
    limit: float = math.inf
    notes: list = field(default_factory=list)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items()
                          if isinstance(v, (int, float, bool)))
        return (f"[{tag}] criterion {self.number} ({self.name}): {shown}; "
                f"runtime {self.runtime:.1f}s / {self.limit:.0f}s")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, int):
        return str(v)
    return f"{v:.3g}"


def _timed(number: int, name: str, limit: float, body: Callable[[], tuple]) -> CriterionResult:
    t0 = time.perf_counter()
    ok, metrics, notes = body()
    dt = time.perf_counter() - t0
    return CriterionResult(number, name, bool(ok and dt < limit), metrics, dt, limit, notes)


# ---------------------------------------------------------------------------
# 1. eigen-structure


def eigen_table(xi2_values, k_values, omega_values):
    """Rows (xi2, k, omega, lam1, lam3, gap, residual, identity_err)."""
    rows = []
    for z in xi2_values:
        for k in k_values:
            for w in omega_values:
                l1, l2, l3, l4 = (float(np.asarray(x).ravel()[0])
                                  for x in wo.eigenvalues_closed(z, k, w))
                A = wo.assemble_mode_matrix((math.sqrt(z), 0.0), k, w)
                ref = wo.eigenvalues_oracle(A)
                closed = np.sort([l1, l2, l3, l4])[::-1]
                resid = float(np.max(np.abs(closed - ref)))
                prod = abs(l1 * l3 - w * abs(k))
                if k != 0:
                    prod /= w * abs(k)
                ident = max(abs(l1 + l2), abs(l3 + l4), prod)
                rows.append((z, k, w, l1, l3, l1 - l3, resid, ident))
    return rows


def criterion_1(n: int = 10) -> CriterionResult:
    def body():
        xi2 = np.linspace(0.1, 16.0, n)
        ks = [0.0, math.pi, 2 * math.pi, 3 * math.pi]
        om = np.linspace(1.0 / n, 1.0, n)
        rows = eigen_table(xi2, ks, om)
        resid = max(r[6] for r in rows)
        ident = max(r[7] for r in rows)
        ineq = all(r[3] ** 2 >= r[0] / 2 and r[3] ** 2 - r[1] ** 2 >= r[0] / 2 * (1 - 1e-14)
                   for r in rows)
        ok = resid < 1e-10 and ident < 1e-12 and ineq
        return ok, {"max_residual": resid, "max_identity_err": ident, "inequalities": ineq,
                    "samples": len(rows)}, []
    return _timed(1, "eigen-structure", 10.0, body)


# ---------------------------------------------------------------------------
# 2. propagator


def _random_state(grid, rng, omega, frac=0.3):
    def field(parity):
        c = sc.forward_array(rng.standard_normal(grid.shape), parity)
        jx = np.abs(np.fft.fftfreq(grid.nx, 1.0 / grid.nx))
        jy = np.abs(np.fft.fftfreq(grid.ny, 1.0 / grid.ny))
        m = ((jx[:, None, None] < frac * grid.nx) & (jy[None, :, None] < frac * grid.ny))
        return c * m
    return wo.SpectralState4(field(sc.EVEN), field(sc.EVEN), field(sc.EVEN), field(sc.ODD),
                             grid, omega)


def criterion_2(eps: float = 0.2, m: float = 3.0, seed: int = 7) -> CriterionResult:
    def body():
        grid = sc.make_grid(64, 64, 8, 2 * math.pi * 4)
        omega = eps ** (m - 1)
        rng = np.random.default_rng(seed)
        prop = wo.WavePropagator(grid, omega)
        Y = _random_state(grid, rng, omega)
        n0 = wo.state_norm(Y)
        c = prop.coefficients(Y)
        drift = 0.0
        for t in np.linspace(0.0, 100.0 / eps ** m, 11):
            drift = max(drift, abs(wo.state_norm(prop.from_coefficients(c, t)) / n0 - 1))
        q, v1, v2 = wo.kernel_project(Y.s, (Y.V1, Y.V2, Y.V3), omega, grid)
        K = wo.kernel_state(q, v1, v2, grid, omega)
        kn = wo.state_norm(K)
        moved = wo.state_norm(prop.evolve(K, 100.0 / eps ** m) - K) / kn
        q2, w1, w2 = wo.kernel_project(K.s, (K.V1, K.V2, K.V3), omega, grid)
        idem = max(np.max(np.abs(q2 - q)), np.max(np.abs(w1 - v1)), np.max(np.abs(w2 - v2)))
        idem /= max(np.max(np.abs(q)), np.max(np.abs(v1)), np.max(np.abs(v2)))
        B = wo.apply_B(K)
        annihil = wo.state_norm(B) / kn
        ok = drift < 1e-12 and moved < 1e-10 and idem < 1e-11 and annihil < 1e-10
        return ok, {"isometry_drift": drift, "kernel_motion": moved, "idempotence": idem,
                    "B_on_kernel": annihil}, []
    return _timed(2, "propagator", 30.0, body)


# ---------------------------------------------------------------------------
# 3. van Corput


PSI = dl.CutoffProfile(1.0, 4.0)


def criterion_3(radii: Sequence[float] = (0.0, 2.0)) -> CriterionResult:
    def body():
        worst = 0.0
        for branch in (1, 3):
            for k in (math.pi, 2 * math.pi):
                for w in (1.0, 0.3, 0.1, 0.03):
                    for t in (1e1, 1e2, 1e3, 1e4):
                        for r in radii:
                            val = dl.oscillatory_kernel(t, r, k, w, branch, PSI)
                            vc = dl.van_corput_bound(PSI, k, w, t, branch, r)
                            worst = max(worst, dl.van_corput_ratio(val, vc))
        lows = []
        for k in (math.pi, 2 * math.pi):
            ratios = [dl.van_corput_bound(PSI, k, w, 1.0, 3).lambda0 / w
                      for w in (1.0, 0.3, 0.1, 0.03)]
            lows.append(min(ratios))
        low = min(lows)
        ok = worst <= 10.0 and low > 0
        return ok, {"c_star": worst, "min_lambda0_over_omega": low}, []
    return _timed(3, "van Corput", 300.0, body)


# ---------------------------------------------------------------------------
# 4. dispersive decay


def criterion_4(eps_values: Sequence[float] = (0.3, 0.2, 0.1), m: float = 3.0,
                k: float = math.pi, informational: bool = True) -> CriterionResult:
    def body():
        h = dl.RadialGaussian(1.0)
        beta = 1.0 / m
        worst = 0.0
        notes = []
        for eps in eps_values:
            w = eps ** (m - 1)
            for branch in (1, 3):
                td = dl.dispersion_time(PSI, k, w, branch)
                times = np.geomspace(td, 100 * td, 13)
                recs = dl.decay_sweep_radial(h, k, w, times, math.inf, beta, PSI, branch,
                                             fit_until=10 * td)
                r = max(x.ratio for x in recs[5:])
                worst = max(worst, r)
                notes.append(f"eps={eps} branch={branch} t=[{td:.3g},{100 * td:.3g}] "
                             f"max ratio after fit decade {r:.3f}")
                if informational:
                    naive = np.geomspace(0.01, 1.0, 9) / eps ** m
                    rn = dl.decay_sweep_radial(h, k, w, naive, math.inf, beta, PSI, branch,
                                               fit_until=naive[0] * 10)
                    notes.append(f"  (informational) rescaled window tau in [0.01, 1]: "
                                 f"max ratio {max(x.ratio for x in rn):.3f}")
        g = sc.make_grid(128, 128, 1, 60.0)
        X, Y = g.mesh2d()
        hh = np.exp(-((X - 30.0) ** 2 + (Y - 30.0) ** 2) / 2.0)
        drift = 0.0
        for eps in eps_values:
            recs = dl.decay_sweep(hh, k, eps ** (m - 1), [1.0, 10.0, 100.0, 1000.0], 2.0,
                                  beta, g, PSI, branch=1)
            n = np.array([x.norm for x in recs])
            drift = max(drift, float(np.max(np.abs(n / n[0] - 1))))
        ok = worst <= 1.0 + 1e-9 and drift < 1e-12
        return ok, {"max_ratio": worst, "l2_drift": drift}, notes
    return _timed(4, "dispersive decay", 300.0, body)


# ---------------------------------------------------------------------------
# 5. QG / Euler


def criterion_5(seed: int = 11) -> CriterionResult:
    def body():
        g = sc.make_grid(128, 128, 1, 2 * math.pi)
        z = ls.gaussian_dipole(g, amplitude=3.0)
        s = ls.QGState(sc.forward2d(z).astype(complex) * g.dealias_mask2d(), 0.5, g)
        _, rec = ls.integrate(s, 1.0, record_every=0.1)
        E = np.array([r.energy for r in rec])
        edrift = float(np.max(np.abs(E / E[0] - 1)))

        g32 = sc.make_grid(32, 32, 1, 2 * math.pi)
        rng = np.random.default_rng(seed)
        c = sc.forward2d(rng.standard_normal(g32.shape2d))
        j = np.abs(np.fft.fftfreq(32, 1 / 32))
        c *= (j[:, None] <= 4) & (j[None, :] <= 4)
        c[0, 0] = 0
        c = sc.forward2d(sc.inverse2d(c))
        c *= 2.0 / np.max(np.abs(sc.inverse2d(c)))
        zeta = ls.Vorticity2D(c, g32)
        qg = zeta.as_qg()
        red = 0.0
        for _ in range(5):
            zeta = ls.euler_step(zeta, 0.05)
            qg = ls.qg_step(qg, 0.05)
            red = max(red, float(np.max(np.abs(zeta.zeta - qg.pi))))

        z0 = ls.Vorticity2D(c, g32)
        Z0 = ls.enstrophy(z0)
        z1, _ = ls.integrate(z0, 1.0)
        zdrift = abs(ls.enstrophy(z1) / Z0 - 1)

        def run(n, T=0.4):
            z = z0
            for _ in range(n):
                z = ls.euler_step(z, T / n)
            return z.zeta
        ref = run(256)
        e1, e2 = np.max(np.abs(run(8) - ref)), np.max(np.abs(run(16) - ref))
        order = float(np.log2(e1 / e2))
        ok = edrift < 1e-6 and red < 1e-13 and zdrift < 1e-8 and order >= 3.7
        return ok, {"qg_energy_drift": edrift, "omega0_vs_euler": red,
                    "enstrophy_drift": zdrift, "rk4_order": order}, []
    return _timed(5, "QG/Euler solvers", 120.0, body)


# ---------------------------------------------------------------------------
# 6. static states


def criterion_6() -> CriterionResult:
    def body():
        g = sc.make_grid(8, 8, 64, 10.0)
        e2 = cs.EquationOfState(2.0)
        err = 0.0
        for eps in (0.4, 0.3, 0.2, 0.1, 0.05):
            reg = cs.ScalingRegime(eps)
            rt = cs.static_state(reg, e2, g).values
            err = max(err, float(np.max(np.abs(rt - (1 - eps ** 4 * g.z)[None, None, :]))))
        e53 = cs.EquationOfState(5.0 / 3.0)
        eps = np.array([0.4, 0.3, 0.2, 0.1, 0.05])
        z = np.linspace(0.0, 1.0, 257)
        dev = [float(np.max(np.abs(cs.static_profile(z, cs.ScalingRegime(x), e53) - 1)))
               for x in eps]
        slope = cs.fit_exponent(eps, dev)
        ok = err < 1e-14 and abs(slope - 4.0) <= 0.05
        return ok, {"gamma2_error": err, "gamma53_exponent": slope}, []
    return _timed(6, "static states", 5.0, body)


# ---------------------------------------------------------------------------
# 7. singular limit


def limit_sweep(eps_values: Sequence[float], setup: cs.LimitSetup = cs.LimitSetup(),
                progress: Optional[Callable[[str], None]] = None):
    results = []
    for eps in eps_values:
        t0 = time.perf_counter()
        results.append(cs.limit_study(eps, setup))
        if progress is not None:
            progress(f"limit eps={eps}: {results[-1].steps} steps, "
                     f"{time.perf_counter() - t0:.1f}s")
    return results


def limit_checks(results, m: float = 3.0) -> dict:
    """Parts (a) to (d) of the singular-limit criterion for a finished sweep."""
    res = sorted(results, key=lambda r: -r.eps)
    eps = [r.eps for r in res]
    dev = [max(row.dens_dev for row in r.rows) for r in res]
    final_E = [r.rows[-1].Eeps for r in res]
    local = [r.local_error for r in res]
    slack = [float(np.min(r.rei.slack) / r.energy0) for r in res]
    out = {"eps": eps, "sup_dens_dev": dev, "E_final": final_E, "local_error": local,
           "min_slack_over_E0": slack}
    if len(res) >= 3:
        out["density_exponent"] = cs.fit_exponent(eps, dev)
        out["a"] = out["density_exponent"] >= m - 0.2
    else:
        out["density_exponent"] = "insufficient data"
        out["a"] = None
    out["b"] = bool(np.all(np.diff(final_E) < 0)) if len(res) > 1 else None
    out["c"] = bool(np.all(np.diff(local) < 0)) if len(res) > 1 else None
    out["d"] = bool(min(slack) >= -1e-6)
    return out


def criterion_7(eps_values: Sequence[float] = (0.4, 0.3, 0.2),
                setup: cs.LimitSetup = cs.LimitSetup(), progress=None) -> CriterionResult:
    def body():
        res = limit_sweep(eps_values, setup, progress)
        chk = limit_checks(res, setup.m)
        ok = all(chk[p] for p in "abcd")
        metrics = {"density_exponent": chk["density_exponent"],
                   "E_monotone": chk["b"], "local_monotone": chk["c"],
                   "min_slack_over_E0": min(chk["min_slack_over_E0"])}
        notes = [f"eps={e}: sup|rho-rho~|={d:.4g} E(T)={E:.5g} local={lo:.5g} "
                 f"min slack/E0={s:.3g}"
                 for e, d, E, lo, s in zip(chk["eps"], chk["sup_dens_dev"], chk["E_final"],
                                           chk["local_error"], chk["min_slack_over_E0"])]
        return ok, metrics, notes
    return _timed(7, "singular limit", 1200.0, body)


# ---------------------------------------------------------------------------
# 8. decomposition


def criterion_8(trials: int = 5, seed: int = 3) -> CriterionResult:
    def body():
        g = sc.make_grid(32, 32, 8, 20.0)
        rng = np.random.default_rng(seed)
        worst = {"reassembly": 0.0, "orthogonality": 0.0, "pythagoras": 0.0}
        for i in range(trials):
            eps = float(rng.uniform(0.1, 0.9))
            reg = cs.ScalingRegime(eps)
            Y = _random_state(g, rng, reg.omega)
            d = cs.decompose_initial_data(Y.s, (Y.V1, Y.V2, Y.V3), reg, None, g)
            w, k = d.wave_state(), d.kernel_state()
            full = w + k
            n2 = wo.state_inner(Y, Y)
            worst["reassembly"] = max(worst["reassembly"],
                                      wo.state_norm(full - Y) / math.sqrt(n2))
            worst["orthogonality"] = max(worst["orthogonality"], abs(wo.state_inner(w, k)) / n2)
            worst["pythagoras"] = max(worst["pythagoras"],
                                      abs(wo.state_inner(w, w) + wo.state_inner(k, k) - n2) / n2)
        ok = (worst["reassembly"] < 1e-12 and worst["orthogonality"] < 1e-10
              and worst["pythagoras"] < 1e-10)
        return ok, worst, []
    return _timed(8, "decomposition", 5.0, body)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
            5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}


def run_all(numbers: Sequence[int] = tuple(CRITERIA), progress=None) -> list:
    out = []
    for n in numbers:
        r = CRITERIA[n]() if n != 7 else criterion_7(progress=progress)
        out.append(r)
        if progress is not None:
            progress(r.line())
    return out
