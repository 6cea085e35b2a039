"""``rossbylab`` command line: configuration, experiment drivers and reports.

Configuration files are plain ``key = value`` lines grouped in the sections
``[grid]``, ``[regime]``, ``[experiment]`` and ``[output]``; lists are comma
separated.  Command-line ``--set section.key=value`` pairs override the file.

Exit status: 0 when every evaluated check passes, 1 on a hard error,
2 when a run finishes but an acceptance check fails.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__

SCHEMA_VERSION = 1
SUBCOMMANDS = ("spectrum", "decay", "euler", "qg", "limit", "report")

HEADERS = {
    "spectrum": ["xi2", "k", "omega", "lambda1", "lambda3", "gap", "residual", "identity_err"],
    "decay": ["t", "p", "k", "omega", "beta", "norm", "bound", "ratio"],
    "euler": ["t", "energy", "enstrophy", "maxvort"],
    "qg": ["t", "energy", "enstrophy", "maxvort"],
    "limit": ["t", "eps", "delta", "Eeps", "energy", "mass", "dens_dev"],
}

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


# ---------------------------------------------------------------------------
# configuration


def _floats(text: str) -> tuple:
    vals = tuple(float(x) for x in text.split(",") if x.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _ints(text: str) -> tuple:
    vals = tuple(int(x) for x in text.split(",") if x.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


# section -> key -> (field name, converter)
SCHEMA = {
    "grid": {"nx": ("nx", int), "ny": ("ny", int), "nz": ("nz", int), "L": ("L", float)},
    "regime": {"eps": ("eps", _floats), "m": ("m", float), "n": ("n", float),
               "alpha": ("alpha", float), "gamma": ("gamma", float), "mu": ("mu", float),
               "eta": ("eta", float)},
    "experiment": {"subcommand": ("subcommand", str), "delta": ("delta", _floats),
                   "a": ("a", float), "b": ("b", float), "T": ("T", float),
                   "seed": ("seed", int), "kappa": ("kappa", _ints),
                   "branches": ("branches", _ints), "samples": ("samples", int),
                   "record_every": ("record_every", float), "amplitude": ("amplitude", float),
                   "density": ("density", float), "divergent": ("divergent", float)},
    "output": {"dir": ("output_dir", str)},
}

# defaults that depend on the subcommand; everything else is in RunConfig
SUB_DEFAULTS = {
    "spectrum": dict(eps=(0.4, 0.3, 0.2, 0.1)),
    "decay": dict(nx=128, ny=128, nz=1, L=60.0, eps=(0.3, 0.2, 0.1)),
    "euler": dict(nx=128, ny=128, nz=1, L=2 * math.pi, T=1.0, record_every=0.1),
    "qg": dict(nx=128, ny=128, nz=1, L=2 * math.pi, T=1.0, record_every=0.1, eps=(0.5,)),
    "limit": dict(),
    "report": dict(),
}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str = "limit"
    nx: int = 64
    ny: int = 64
    nz: int = 8
    L: float = 20.0
    eps: tuple = (0.4, 0.3, 0.2)
    m: float = 3.0
    n: float = 1.0
    alpha: float = 1.0
    gamma: float = 2.0
    mu: float = 1.0
    eta: float = 0.0
    delta: tuple = (0.1,)
    a: float = 1.0
    b: float = 4.0
    T: float = 0.5
    seed: int = 0
    kappa: tuple = (0, 1, 2, 3)
    branches: tuple = (1, 3)
    samples: int = 10
    record_every: float = 0.05
    amplitude: float = 3.0
    density: float = 0.5
    divergent: float = 0.3
    output_dir: str = "rossbylab_out"

    @property
    def omegas(self) -> tuple:
        return tuple(e ** (self.m - 1) for e in self.eps)


def _lines_of(text: str):
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", no)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", no)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", no)
        key, value = (s.strip() for s in line.split("=", 1))
        yield no, section, key, value


def parse_config(text: str = "", overrides=(), subcommand: Optional[str] = None) -> RunConfig:
    """Parse configuration text plus ``section.key=value`` overrides into a RunConfig."""
    found, where = {}, {}
    entries = list(_lines_of(text))
    for i, item in enumerate(overrides):
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        entries.append((f"--set #{i + 1}", sec.strip(), key.strip(), value.strip()))
    seen = set()
    for no, section, key, value in entries:
        if section is None:
            section = "experiment"
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", no)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", no)
        if (section, key) in seen and isinstance(no, int):
            raise ConfigError(f"duplicate key {key!r} in [{section}]", no)
        seen.add((section, key))
        name, conv = SCHEMA[section][key]
        try:
            found[name] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {value!r} ({exc})", no) from None
        where[name] = no
    sub = subcommand or found.get("subcommand", RunConfig.subcommand)
    if subcommand is not None and "subcommand" in found and found["subcommand"] != subcommand:
        raise ConfigError(f"config is for {found['subcommand']!r}, not {subcommand!r}",
                          where["subcommand"])
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {sub!r}", where.get("subcommand"))
    values = dict(SUB_DEFAULTS[sub])
    values.update(found)
    values["subcommand"] = sub
    cfg = RunConfig(**values)
    _validate(cfg, where)
    return cfg


def _validate(cfg: RunConfig, where: dict) -> None:
    def fail(msg, *names):
        line = next((where[n] for n in names if n in where), None)
        raise ConfigError(msg, line)

    if not (cfg.m / 2 > cfg.n >= 1):
        fail(f"regime rule m/2 > n >= 1 violated (m = {cfg.m:g}, n = {cfg.n:g})", "m", "n")
    if not cfg.alpha > 0:
        fail(f"regime rule alpha > 0 violated (alpha = {cfg.alpha:g})", "alpha")
    if not all(0 < e <= 1 for e in cfg.eps):
        fail("eps values must lie in (0, 1]", "eps")
    if not all(0 < d < 1 for d in cfg.delta):
        fail("delta values must lie in (0, 1)", "delta")
    if not cfg.gamma > 1.5:
        fail("gamma must exceed 3/2", "gamma")
    if not 0 < cfg.a < cfg.b:
        fail("cut-off needs 0 < a < b", "a", "b")
    if min(cfg.nx, cfg.ny, cfg.nz) < 1 or cfg.L <= 0:
        fail("grid sizes must be positive", "nx", "ny", "nz", "L")
    if cfg.T <= 0 or cfg.record_every <= 0 or cfg.samples < 2:
        fail("T, record_every must be positive and samples >= 2", "T", "record_every", "samples")
    if any(b not in (1, 3) for b in cfg.branches):
        fail("branches must be 1 or 3", "branches")


def format_config(cfg: RunConfig) -> str:
    """Normalised configuration text; parse_config(format_config(c)) == c."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, (name, _) in keys.items():
            v = getattr(cfg, name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{key} = {v}")
        out.append("")
    return "\n".join(out)


def config_dict(cfg: RunConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items()}


# ---------------------------------------------------------------------------
# output


@contextmanager
def csv_writer(path: str, header):
    """Rows go to ``path.partial`` and are flushed; the file is renamed on success."""
    tmp = path + ".partial"
    fh = open(tmp, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        fh.flush()

        def write(row):
            w.writerow([_cell(x) for x in row])
            fh.flush()

        yield write
    except BaseException:
        fh.close()
        raise
    fh.close()
    os.replace(tmp, path)


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def emit_report(results: Optional[dict] = None, path: Optional[str] = None,
                subcommand: str = "", config: Optional[dict] = None) -> dict:
    """Build (and optionally write) the versioned summary document."""
    results = dict(results or {})
    criteria = {str(k): bool(v) for k, v in results.pop("criteria", {}).items()}
    if not criteria:
        status = "empty"
    else:
        status = "pass" if all(criteria.values()) else "fail"
    doc = {"schema_version": SCHEMA_VERSION, "tool": "rossbylab", "version": __version__,
           "subcommand": subcommand, "config": config or {}, "results": _jsonable(results),
           "criteria": criteria, "status": status}
    if path is not None:
        tmp = path + ".partial"
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    return doc


def read_report(path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION or "criteria" not in doc:
        raise ValueError(f"{path}: not a rossbylab summary (schema {SCHEMA_VERSION})")
    return doc


# ---------------------------------------------------------------------------
# experiments


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def run_spectrum(cfg: RunConfig, out: str) -> dict:
    from .acceptance import eigen_table

    xi2 = np.linspace(0.1, 16.0, cfg.samples)
    ks = [kk * math.pi for kk in cfg.kappa]
    rows = eigen_table(xi2, ks, cfg.omegas)
    with csv_writer(os.path.join(out, "spectrum.csv"), HEADERS["spectrum"]) as write:
        for r in rows:
            write(r)
    resid = max(r[6] for r in rows)
    ident = max(r[7] for r in rows)
    ineq = all(r[3] ** 2 >= r[0] / 2 and r[3] ** 2 - r[1] ** 2 >= r[0] / 2 * (1 - 1e-14)
               for r in rows)
    return {"max_residual": resid, "max_identity_err": ident, "rows": len(rows),
            "criteria": {"eigen_residual": resid < 1e-10, "eigen_identities": ident < 1e-12,
                         "eigen_inequalities": ineq}}


def run_decay(cfg: RunConfig, out: str) -> dict:
    from . import dispersion_lab as dl
    from .spectral_core import make_grid

    psi = dl.CutoffProfile(cfg.a, cfg.b)
    beta = 1.0 / cfg.m
    k = cfg.kappa[1] * math.pi if len(cfg.kappa) > 1 else max(cfg.kappa[0], 1) * math.pi
    h = dl.RadialGaussian(1.0)
    grid = make_grid(cfg.nx, cfg.ny, 1, cfg.L)
    X, Y = grid.mesh2d()
    hh = np.exp(-((X - cfg.L / 2) ** 2 + (Y - cfg.L / 2) ** 2) / 2.0)
    worst, drift = 0.0, 0.0
    with csv_writer(os.path.join(out, "decay.csv"), HEADERS["decay"]) as write:
        for eps, w in zip(cfg.eps, cfg.omegas):
            for branch in cfg.branches:
                td = dl.dispersion_time(psi, k, w, branch)
                times = np.geomspace(td, 100 * td, 13)
                recs = dl.decay_sweep_radial(h, k, w, times, math.inf, beta, psi, branch,
                                             fit_until=10 * td)
                for r in recs:
                    write((r.t, r.p, r.k, r.omega, r.beta, r.norm, r.bound, r.ratio))
                # the constant is fitted on the first decade
                worst = max(worst, max(r.ratio for r in recs[6:]))
            recs = dl.decay_sweep(hh, k, w, [1.0, 10.0, 100.0, 1000.0], 2.0, beta, grid, psi)
            for r in recs:
                write((r.t, r.p, r.k, r.omega, r.beta, r.norm, r.bound, r.ratio))
            n = np.array([r.norm for r in recs])
            drift = max(drift, float(np.max(np.abs(n / n[0] - 1))))
    return {"max_ratio": worst, "l2_drift": drift,
            "criteria": {"decay_bound": worst <= 1 + 1e-9, "l2_isometry": drift < 1e-12}}


def _run_vortex(cfg: RunConfig, out: str, omega: Optional[float]) -> dict:
    from . import limit_solvers as ls
    from .spectral_core import forward2d, make_grid

    grid = make_grid(cfg.nx, cfg.ny, 1, cfg.L)
    z = ls.gaussian_dipole(grid, amplitude=cfg.amplitude)
    c = forward2d(z).astype(complex) * grid.dealias_mask2d()
    state = ls.Vorticity2D(c, grid) if omega is None else ls.QGState(c, omega, grid)
    name = "euler" if omega is None else "qg"
    with csv_writer(os.path.join(out, f"{name}.csv"), HEADERS[name]) as write:
        _, recs = ls.integrate(state, cfg.T, record_every=cfg.record_every)
        for r in recs:
            write((r.t, r.energy, r.enstrophy, r.maxvort))
    E = np.array([r.energy for r in recs])
    Z = np.array([r.enstrophy for r in recs])
    ed = float(np.max(np.abs(E / E[0] - 1)))
    zd = float(np.max(np.abs(Z / Z[0] - 1)))
    res = {"energy_drift": ed, "enstrophy_drift": zd, "omega": omega if omega else 0.0,
           "criteria": {"energy_conserved": ed < 1e-6}}
    if omega is None:
        res["criteria"]["enstrophy_conserved"] = zd < 1e-8 * cfg.T
    return res


def run_limit(cfg: RunConfig, out: str) -> dict:
    from . import compressible_solver as cs
    from .acceptance import limit_checks

    results = {"runs": {}}
    criteria = {}
    with csv_writer(os.path.join(out, "limit.csv"), HEADERS["limit"]) as write:
        for delta in cfg.delta:
            setup = cs.LimitSetup(nx=cfg.nx, ny=cfg.ny, nz=cfg.nz, L=cfg.L, m=cfg.m, n=cfg.n,
                                  alpha=cfg.alpha, mu=cfg.mu, eta=cfg.eta, gamma=cfg.gamma,
                                  delta=delta, T=cfg.T, density=cfg.density,
                                  divergent=cfg.divergent, record_every=cfg.record_every)
            runs = []
            for eps in cfg.eps:
                r = cs.limit_study(eps, setup)
                _log(f"limit delta={delta} eps={eps}: {r.steps} steps")
                for row in r.rows:
                    write(tuple(row))
                runs.append(r)
            chk = limit_checks(runs, cfg.m)
            if len(runs) >= 3:
                rep = cs.uniform_bounds_report([r.bounds for r in runs], cfg.m, cfg.n,
                                               cfg.alpha)
                chk["bounds"] = rep.rows
                chk["kinetic_spread"] = rep.kinetic_spread
            else:
                chk["bounds"] = "insufficient data"
            results["runs"][f"delta={delta}"] = chk
            for part, label in zip("abcd", ("density_exponent", "E_monotone",
                                            "local_monotone", "rei_slack")):
                if chk[part] is not None:
                    criteria[f"delta={delta}:{label}"] = chk[part]
    results["criteria"] = criteria
    return results


def run_report(dirs, out: str, acceptance: bool) -> dict:
    criteria, results = {}, {}
    if acceptance:
        from .acceptance import run_all

        for r in run_all(progress=_log):
            criteria[f"criterion_{r.number}"] = r.passed
            results[f"criterion_{r.number}"] = {"name": r.name, "metrics": r.metrics,
                                                "notes": r.notes}
    for d in dirs:
        path = os.path.join(d, "summary.json") if os.path.isdir(d) else d
        doc = read_report(path)
        results[path] = {"subcommand": doc["subcommand"], "status": doc["status"]}
        for k, v in doc["criteria"].items():
            criteria[f"{doc['subcommand']}:{k}@{path}"] = v
    results["criteria"] = criteria
    return results


def run_experiment(cfg: RunConfig, out: Optional[str] = None, dirs=(),
                   acceptance: bool = False) -> int:
    """Run one subcommand and write its CSV and summary.json; returns the exit status."""
    out = out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    sub = cfg.subcommand
    if sub == "spectrum":
        res = run_spectrum(cfg, out)
    elif sub == "decay":
        res = run_decay(cfg, out)
    elif sub == "euler":
        res = _run_vortex(cfg, out, None)
    elif sub == "qg":
        res = _run_vortex(cfg, out, cfg.omegas[0])
    elif sub == "limit":
        res = run_limit(cfg, out)
    else:
        res = run_report(dirs, out, acceptance)
    doc = emit_report(res, os.path.join(out, "summary.json"), sub, config_dict(cfg))
    for k, v in doc["criteria"].items():
        _log(f"[{'PASS' if v else 'FAIL'}] {k}")
    return EXIT_FAIL if doc["status"] == "fail" else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rossbylab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("-c", "--config", help="key=value configuration file")
        s.add_argument("-o", "--out", help="output directory (overrides [output] dir)")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        s.add_argument("--threads", type=int, help="sets ROSSBYLAB_THREADS")
        s.add_argument("--print-config", action="store_true",
                       help="print the normalised configuration and exit")
        if name == "report":
            s.add_argument("inputs", nargs="*", help="run directories or summary.json files")
            s.add_argument("--acceptance", action="store_true",
                           help="also run the full acceptance suite")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = ""
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        if args.threads is not None:
            os.environ["ROSSBYLAB_THREADS"] = str(max(1, args.threads))
        cfg = parse_config(text, args.set, args.subcommand)
        if args.print_config:
            print(format_config(cfg), end="")
            return EXIT_OK
        return run_experiment(cfg, args.out, getattr(args, "inputs", ()),
                              getattr(args, "acceptance", False))
    except (ConfigError, OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        _log(f"rossbylab: error: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
