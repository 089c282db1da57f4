"""Command-line entry point and the (A, B) phase-diagram sweep.

    clinewave eigen    --config run.toml --out results/
    clinewave wave     --config run.toml --out results/
    clinewave simulate --config run.toml --out results/
    clinewave sweep    --config run.toml --out results/

Each run writes ``summary.json`` plus task-specific CSV files.  On failure
``error.json`` is written and the exit status is nonzero (2 for
configuration errors, 3 for solver errors).  ``CLINEWAVE_WORKERS`` caps the
number of sweep processes.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .discretize import Grid2D
from .eigen import Extinct, Invading, Marginal, classify, solve_line
from .model import quadratic_model

log = logging.getLogger("clinewave")

WORKERS_ENV = "CLINEWAVE_WORKERS"
SCHEMA_VERSION = 1


# --------------------------------------------------------------------------
# sweep

@dataclass(frozen=True)
class SweepRow:
    A: float
    B: float
    lam: float
    label: str
    c_star: float
    error: str = ""


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    boundary: tuple[tuple[float, float, float], ...]  # (B, empirical A, analytic A)
    cell: float
    max_distance: float
    consistent: bool

    @property
    def max_distance_cells(self) -> float:
        return self.max_distance / self.cell if self.cell > 0 else 0.0


def _classify_point(args):
    A, B, k, rmax, h = args
    try:
        p = quadratic_model(A, B, k, rmax)
        cls = classify(p, 1e-7, h=h)
        c = cls.c_star if isinstance(cls, Invading) else (0.0 if isinstance(cls, Marginal) else math.nan)
        return SweepRow(A, B, cls.lambda_inf, cls.label, c)
    except Exception as e:  # recorded, sweep continues
        return SweepRow(A, B, math.nan, "error", math.nan, f"{type(e).__name__}: {e}")


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer", WORKERS_ENV)
    return max(1, n)


def sweep(A_values: Sequence[float], B_values: Sequence[float], *, k: float = 1.0,
          rmax: float = 1.0, h: float = 0.05, workers: int | None = None) -> SweepResult:
    """Classify every (A, B) lattice point and compare the sign change with A (B^2+1) = rmax^2."""
    A_values = np.asarray(A_values, float)
    B_values = np.asarray(B_values, float)
    if A_values.size == 0 or B_values.size == 0:
        raise ValueError("empty sweep lattice")
    jobs = [(float(A), float(B), k, rmax, h) for B in B_values for A in A_values]
    n = worker_count(workers)
    if n == 1:
        rows = [_classify_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            rows = list(ex.map(_classify_point, jobs, chunksize=max(1, len(jobs) // (4 * n))))

    cell = float(np.min(np.diff(np.sort(A_values)))) if A_values.size > 1 else 0.0
    boundary = []
    consistent = True
    max_dist = 0.0
    nA = A_values.size
    order = np.argsort(A_values)
    for bi, B in enumerate(B_values):
        row = [rows[bi * nA + i] for i in order]
        A_true = rmax ** 2 / (B * B + 1.0)
        for r in row:
            crit = r.A * (B * B + 1.0) - rmax ** 2
            expect = "marginal" if abs(crit) < 1e-9 else ("extinct" if crit > 0 else "invading")
            if r.label != expect:
                consistent = False
        # empirical boundary: zero of lambda, linearly interpolated between sign changes
        lam = np.array([r.lam for r in row])
        As = A_values[order]
        A_emp = math.nan
        for i in range(nA):
            if lam[i] == 0 or row[i].label == "marginal":
                A_emp = As[i]
                break
            if i + 1 < nA and np.sign(lam[i]) != np.sign(lam[i + 1]) and np.isfinite(lam[i + 1]):
                A_emp = As[i] - lam[i] * (As[i + 1] - As[i]) / (lam[i + 1] - lam[i])
                break
        if math.isnan(A_emp):
            # no crossing on this row: the curve must lie outside the A range
            inside = As[0] <= A_true <= As[-1]
            if inside and nA > 1:
                max_dist = math.inf
        else:
            max_dist = max(max_dist, abs(A_emp - A_true))
        boundary.append((float(B), float(A_emp), float(A_true)))
    return SweepResult(tuple(rows), tuple(boundary), cell, max_dist, consistent)


# --------------------------------------------------------------------------
# task runners

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _write_json(path: Path, data: dict):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows):
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _get(sec, key, default, kind=float):
    v = sec.get(key, default)
    if v is None:
        return None
    try:
        if kind is bool:
            if not isinstance(v, bool):
                raise TypeError
            return v
        if kind in (int, float) and isinstance(v, bool):
            raise TypeError
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}' has the wrong type (expected {kind.__name__})", key)


def run_eigen(cfg: RunConfig, out: Path) -> dict:
    p = cfg.params()
    sec = cfg.section
    nu = _get(sec, "nu", 0.0)
    h = _get(sec, "h", 0.02)
    tol = _get(sec, "tol", 1e-10)
    pair = solve_line(p, nu, tol, h=h)
    cls = classify(p, _get(sec, "marginal_tol", 1e-7), h=h) if nu == 0 else None
    lam = pair.lam
    c_star = cls.c_star if isinstance(cls, Invading) else (0.0 if isinstance(cls, Marginal) else None)
    if _get(sec, "samples", True, bool):
        _write_csv(out / "gamma.csv", ["z", "gamma"], zip(pair.z, pair.gamma))
    return {"lambda": lam, "c_star": c_star,
            "classification": cls.label if cls else None,
            "grid": {"b": pair.b, "n": pair.grid.n, "h": pair.grid.h, "nu": nu},
            "residual": pair.residual}


def _wave_grid(sec, default_a, default_b, default_h):
    a = _get(sec, "a", default_a)
    b = _get(sec, "b", default_b)
    if "n_x" in sec or "n_z" in sec:
        return Grid2D(a, b, _get(sec, "n_x", 201, int), _get(sec, "n_z", 81, int))
    hx = _get(sec, "hx", default_h)
    hz = _get(sec, "hz", hx)
    return Grid2D.with_spacing(a, b, hx, hz)


def run_wave(cfg: RunConfig, out: Path) -> dict:
    from .waves import (FastWaveConfig, HomotopyConfig, refine_to_strip, solve_box_homotopy,
                        solve_fast_wave)
    p = cfg.params()
    sec = cfg.section
    mode = sec.get("mode", "minimal")
    cls = classify(p)
    if not isinstance(cls, Invading):
        raise ConfigError(f"no travelling wave: population is {cls.label}", "model")
    if mode == "minimal":
        hc = HomotopyConfig(gamma=_get(sec, "gamma", 1.0), epsilon=_get(sec, "epsilon", None),
                            tau_step=_get(sec, "tau_step", 0.25),
                            residual_tol=_get(sec, "residual_tol", 1e-8))
        ladder = sec.get("ladder")
        if ladder:
            h = _get(sec, "hx", 0.2)
            grids = [Grid2D.with_spacing(float(a), float(b), h, _get(sec, "hz", h)) for a, b in ladder]
            sol = refine_to_strip(p, grids, hc, tol=_get(sec, "ladder_tol", 0.02))
        else:
            sol = solve_box_homotopy(p, _wave_grid(sec, 20.0, 8.0, 0.2), hc, classification=cls)
    elif mode == "fast":
        c = sec.get("c")
        c = float(c) if c is not None else _get(sec, "c_factor", 1.2) * cls.c_star
        fc = FastWaveConfig(eps_exp=_get(sec, "eps_exp", None), A=_get(sec, "A_coeff", None),
                            damping=_get(sec, "damping", 0.5), tol=_get(sec, "tol", 1e-11))
        sol = solve_fast_wave(p, c, _wave_grid(sec, 25.0, 8.0, 0.2), fc)
    else:
        raise ConfigError("wave.mode must be 'minimal' or 'fast'", "wave.mode")
    g = sol.grid
    X, Z = g.mesh()
    _write_csv(out / "profile.csv", ["x", "z", "u"], zip(X.ravel(), Z.ravel(), sol.u.ravel()))
    np.save(out / "profile.npy", sol.u)
    d = sol.diagnostics
    return {"mode": mode, "c": sol.c, "c_star": cls.c_star, "epsilon": sol.epsilon, "tau": sol.tau,
            "residual": sol.residual,
            "grid": {"a": g.a, "b": g.b, "n_x": g.n_x, "n_z": g.n_z},
            "diagnostics": {"passed": d.passed, "checks": d.summary()} if d else None,
            "c_history": sol.meta.get("c_history")}


def run_simulate(cfg: RunConfig, out: Path) -> dict:
    from .simulate import (StepScheme, extinction_grid, invasion_grid, run_extinction,
                           run_invasion)
    p = cfg.params()
    sec = cfg.section
    cls = classify(p)
    regime = sec.get("regime", "auto")
    if regime == "auto":
        regime = "invasion" if isinstance(cls, Invading) else "extinction"
    T = _get(sec, "T", 100.0 if regime == "invasion" else 20.0)
    sch = StepScheme(_get(sec, "dt", 0.05), implicit_growth=_get(sec, "implicit_growth", True, bool))
    h = _get(sec, "h", 0.25)
    interval = _get(sec, "output_interval", 0.5)
    if regime == "invasion":
        if not isinstance(cls, Invading):
            raise ConfigError(f"invasion run requested but population is {cls.label}", "simulate.regime")
        g, x0 = invasion_grid(p, T, cls.c_star, h)
        if "a" in sec or "b" in sec:
            g = Grid2D.with_spacing(_get(sec, "a", g.a), _get(sec, "b", g.b), h, h)
            x0 = -g.a + 15.0
        res = run_invasion(p, g, sch, T, _get(sec, "theta", 0.01), x0=x0, output_interval=interval)
        summary = {"regime": regime, "speed": res.speed, "r2": res.r2, "c_star": res.c_star,
                   "theta": res.theta}
    elif regime == "extinction":
        if not isinstance(cls, Extinct):
            raise ConfigError(f"extinction run requested but population is {cls.label}",
                              "simulate.regime")
        g = extinction_grid(p, h, _get(sec, "a", 40.0))
        res = run_extinction(p, g, sch, T, output_interval=interval)
        summary = {"regime": regime, "rate": res.rate, "r2": res.r2, "lambda": res.lambda_inf,
                   "nonincreasing": res.nonincreasing}
    else:
        raise ConfigError("simulate.regime must be invasion, extinction or auto", "simulate.regime")
    s = res.series
    front = s.get("front", [math.nan] * len(s["t"]))
    _write_csv(out / "timeseries.csv", ["t", "front", "sup_ratio", "mass"],
               zip(s["t"], front, s["sup_ratio"], s["mass"]))
    summary.update({"T": T, "dt": sch.dt, "grid": {"a": g.a, "b": g.b, "n_x": g.n_x, "n_z": g.n_z},
                    "clipped_mass": res.state.clipped})
    return summary


def run_sweep(cfg: RunConfig, out: Path) -> dict:
    sec = cfg.section
    m = cfg.model
    A = np.linspace(_get(sec, "A_min", 0.1), _get(sec, "A_max", 2.0), _get(sec, "n_A", 20, int))
    B = np.linspace(_get(sec, "B_min", 0.0), _get(sec, "B_max", 3.0), _get(sec, "n_B", 20, int))
    res = sweep(A, B, k=float(m.get("k", 1.0)), rmax=float(m.get("rmax", 1.0)),
                h=_get(sec, "h", 0.05), workers=sec.get("workers"))
    _write_csv(out / "sweep.csv", ["A", "B", "lambda", "classification", "c_star", "error"],
               ((r.A, r.B, r.lam, r.label, r.c_star, r.error) for r in res.rows))
    _write_csv(out / "boundary.csv", ["B", "A_empirical", "A_analytic"], res.boundary)
    return {"points": len(res.rows), "errors": sum(1 for r in res.rows if r.error),
            "consistent": res.consistent, "max_distance": res.max_distance,
            "max_distance_cells": res.max_distance_cells, "cell": res.cell}


RUNNERS = {"eigen": run_eigen, "wave": run_wave, "simulate": run_simulate, "sweep": run_sweep}


def run(config_path: str | Path, task: str | None = None, out: str | Path | None = None) -> int:
    """Load the config, dispatch, and write artifacts. Returns the exit status."""
    out_dir = Path(out) if out is not None else None
    started = time.time()
    try:
        cfg = load_config(config_path, task, out)
        out_dir = cfg.out or Path(".")
        out_dir.mkdir(parents=True, exist_ok=True)
        np.random.seed(cfg.seed)
        result = RUNNERS[cfg.task](cfg, out_dir)
    except ConfigError as e:
        _fail(out_dir, "config", e, key=e.key, line=e.line)
        return 2
    except Exception as e:
        _fail(out_dir, "solver", e)
        return 3
    summary = {"schema": SCHEMA_VERSION, "task": cfg.task, "result": result,
               "meta": {"started": started, "elapsed": time.time() - started,
                        "config": str(config_path)}}
    _write_json(out_dir / "summary.json", summary)
    return 0


def _fail(out_dir, kind, exc, **extra):
    info = {"schema": SCHEMA_VERSION, "error": kind, "type": type(exc).__name__,
            "message": str(exc), **{k: v for k, v in extra.items() if v is not None}}
    history = getattr(exc, "c_history", None)
    if history is not None:
        info["c_history"] = history
    if getattr(exc, "last_tau", None) is not None:
        info["last_tau"] = exc.last_tau
    print(json.dumps(_jsonable(info)), file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(out_dir / "error.json", info)
        except OSError:
            pass


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="clinewave", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="task", required=True)
    for name in RUNNERS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", required=True, help="TOML configuration file")
        sp_.add_argument("--out", default=None, help="output directory")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, args.task, args.out)


if __name__ == "__main__":
    sys.exit(main())
