"""Command line driver: run, sweep, validate-config, show-manifest.

Exit codes: 0 success, 1 checksum mismatch in ``show-manifest --verify``,
2 invalid configuration, 3 capacity exceeded (partial outputs kept and
flagged in the manifest).
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import itertools
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__, _kernels
from .branching import ProgenyLaw, mean_ci, run_branching
from .clumps import RadiusLaw, SlotPoints, find_clumps
from .discretize import chain_check, query_grid
from .errors import CapacityError, ConfigurationError, PoissonHailError
from .grid import loynes_grid, regeneration_scan, sample_grid, simulate_growth, simulate_service
from .io import write_arrivals_csv, write_cache, write_rows
from .precedence import query, schedule
from .rain import Dist, RainConfig, ShapeDist, sample_rain
from .seeds import SeedSpec
from .stability import Setup, threshold_scan, time_grid

log = logging.getLogger("poisson_hail")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_CAPACITY = 0, 1, 2, 3


# ------------------------------------------------------------------ config


def load_schema() -> dict:
    return json.loads(resources.files("poisson_hail").joinpath("schema/config.schema.json").read_text())


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc
    validate(cfg)
    return cfg


def validate(cfg) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"{loc}: {exc.message}") from exc
    for cell in expand_cells(cfg):
        try:
            jsonschema.validate(cell, load_schema())
        except jsonschema.ValidationError as exc:
            raise ConfigurationError(f"sweep cell {cell['params']}: {exc.message}") from exc


def expand_cells(cfg) -> list:
    """One config per point of the sweep grid (keys in sorted order)."""
    grid = cfg.get("sweep")
    if not grid:
        return []
    keys = sorted(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cell = copy.deepcopy(cfg)
        cell.pop("sweep")
        cell["params"] = {**cell.get("params", {}), **dict(zip(keys, values))}
        cells.append(cell)
    return cells


def _rain_config(p, lam=None):
    return RainConfig(int(p["d"]), float(p["lam"] if lam is None else lam), tuple(p["window"]),
                      tuple(p["horizon"]), ShapeDist.from_dict(p["shape"]), Dist.from_dict(p["sigma"]),
                      p.get("pad"))


def _rain(p, rng):
    lam_max = p.get("lam_max")
    if lam_max is None:
        return sample_rain(_rain_config(p), rng)
    if lam_max < p["lam"]:
        raise ConfigurationError("lam_max must be at least lam")
    return sample_rain(_rain_config(p, lam_max), rng).thin(float(p["lam"]), float(lam_max))


# ------------------------------------------------------------------ outputs


class Outputs:
    def __init__(self, root: Path, fmt: str):
        self.root = Path(root)
        self.fmt = fmt
        self.files = []

    def table(self, name, header, rows):
        rows = list(rows)
        if self.fmt == "json":
            path = self.root / f"{name}.json"
            recs = [dict(zip(header, (_plain(v) for v in r))) for r in rows]
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(recs, indent=1) + "\n")
        else:
            path = write_rows(self.root / f"{name}.csv", header, rows)
        self.files.append(path)
        return path

    def add(self, path):
        self.files.append(Path(path))


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, tuple):
        return [_plain(a) for a in v]
    return v


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------------ experiments
# each returns one metrics dict per replication


def exp_rain(p, seeds, out: Outputs):
    metrics = []
    for r, spec in enumerate(seeds):
        rain = _rain(p, spec.rng())
        out.add(write_arrivals_csv(rain, out.root / f"arrivals_r{r:03d}.csv"))
        if p.get("cache"):
            out.add(write_cache(rain, out.root / f"arrivals_r{r:03d}.phr"))
        metrics.append({"n_arrivals": len(rain)})
    return metrics


def _queries(p, rng):
    window = p["window"]
    pts = query_grid(window, rng, int(p.get("per_cell", 2)))
    times = p.get("query_times") or [p["horizon"][1]]
    P = np.repeat(pts, len(times), axis=0)
    T = np.tile(np.asarray(times, float), pts.shape[0])
    return P, T


def exp_continuous(p, seeds, out: Outputs):
    metrics = []
    d = int(p["d"])
    for r, spec in enumerate(seeds):
        rng = spec.rng()
        rain = _rain(p, rng)
        rec = schedule(rain)
        out.table(f"schedule_r{r:03d}", ["id", "t", "base", "top", "start", "done"], rec.rows())
        P, T = _queries(p, rng)
        H, W = query(rain, rec, P, T)
        out.table(f"queries_r{r:03d}", [f"x{k + 1}" for k in range(d)] + ["t", "H", "W"],
                  ([*P[q], T[q], H[q], W[q]] for q in range(P.shape[0])))
        metrics.append({"mean_H": float(H.mean()) if H.size else 0.0, "max_H": float(H.max(initial=0.0)),
                        "mean_W": float(W.mean()) if W.size else 0.0})
    return metrics


def exp_chain(p, seeds, out: Outputs):
    metrics, rows = [], []
    d = int(p["d"])
    for r, spec in enumerate(seeds):
        rng = spec.rng()
        rain = _rain(p, rng)
        P, T = _queries(p, rng)
        rep = chain_check(rain, P, T)
        for q in range(P.shape[0]):
            rows.append([r, *P[q], T[q], *rep.heights[q]])
        m = {"violations": len(rep.violations)}
        m.update({k.replace("<=", "_le_"): v for k, v in rep.violations_by_link().items()})
        metrics.append(m)
    out.table("chain", ["rep"] + [f"x{k + 1}" for k in range(d)] + ["t", "H1", "H2", "H3", "H4", "H5"], rows)
    return metrics


def exp_clumps(p, seeds, out: Outputs):
    d, n = int(p["d"]), int(p["size"])
    radius = RadiusLaw.from_dict(p["radius"])
    sigma = Dist.from_dict(p.get("sigma", {"name": "deterministic", "value": 1.0}))
    lam = float(p["lam"])
    lam_max = float(p.get("lam_max", lam))
    metrics, rows = [], []
    for r, spec in enumerate(seeds):
        rng = spec.rng()
        Ls = []
        for slot in range(1, int(p.get("slots", 1)) + 1):
            pts = SlotPoints.sample((n,) * d, lam_max, radius, sigma, rng)
            cl = find_clumps(pts.field(lam))
            for row in cl.rows(slot):
                rows.append([r, row[0], ";".join(map(str, row[1])), *row[2:]])
            Ls.extend(cl.L[~cl.censored].tolist())
        L = np.asarray(Ls, float)
        metrics.append({"n_clumps": int(L.size), "mean_L": float(L.mean()) if L.size else 0.0,
                        "max_L": float(L.max(initial=0.0))})
    out.table("clumps", ["rep", "slot", "root_site", "L", "sigma_hat", "censored"], rows)
    return metrics


def _law(spec):
    if spec["type"] == "fixed":
        return ProgenyLaw.fixed([tuple(v) for v in spec["V"]], float(spec["s"]))
    radius = RadiusLaw.from_dict(spec["radius"])
    height = Dist.from_dict(spec["height"])
    return ProgenyLaw.balls(int(spec["d"]), lambda rng, m: radius.sample(rng, m),
                            lambda rng, m: height.sample(rng, m))


def exp_branching(p, seeds, out: Outputs):
    law = _law(p["law"])
    N = int(p["generations"])
    metrics, rows = [], []
    cap = int(p.get("cap", 10_000_000))
    try:
        for r, spec in enumerate(seeds):
            try:
                run = run_branching(law, N, spec.rng(), cap=cap)
            except CapacityError as exc:
                # same stream, stopped at the last generation that fit
                if exc.completed:
                    part = run_branching(law, exc.completed, spec.rng(), cap=cap)
                    rows.extend([r, *row] for row in part.rows())
                raise
            rows.extend([r, *row] for row in run.rows())
            metrics.append({"h_N": float(run.h[-1]), "h_N_over_N": float(run.h[-1] / N)})
    finally:
        out.table("generations", ["rep", "n", "h_n", "front_paths", "distinct_sites"], rows)
    return metrics


def exp_stability(p, seeds, out: Outputs, coupled_spec=None):
    setup = Setup.from_dict({
        "d": p.get("d", 1),
        "shape": p.get("shape", {"kind": "cube", "size": {"name": "deterministic", "value": 1.0}}),
        "sigma": p.get("sigma", {"name": "deterministic", "value": 1.0}),
        "half_width": p.get("half_width", 20.0),
    })
    lams = sorted(float(a) for a in p["lams"])
    T = float(p["T"])
    grid = time_grid(T, int(p.get("points", 20)))
    x = np.asarray(p.get("x", [0.0] * setup.d), float)
    base = seeds[0] if coupled_spec is None else coupled_spec
    res = threshold_scan(lams, grid, x[None, :], seed=base.child("stability"), setup=setup,
                         replications=len(seeds))
    rows, metrics = [], [dict() for _ in seeds]
    xs = ";".join(repr(float(a)) for a in x)
    for v in res:
        for r in range(len(seeds)):
            W_hat, H_hat = float(v.profiles[r, -1]), float(v.heights[r, -1])
            k_hat = float(v.slopes[r])
            rows.append([v.lam, T, xs, W_hat, H_hat, k_hat, v.kappa_ci[0], v.kappa_ci[1], v.verdict])
            metrics[r][f"kappa_{v.lam:g}"] = k_hat
    out.table("sweep", ["lambda", "T", "x", "W_hat", "H_hat", "kappa_hat", "ci_lo", "ci_hi", "verdict"], rows)
    return metrics


def exp_grid(p, seeds, out: Outputs):
    mode = p.get("mode", "gamma")
    P, N, w = float(p["p"]), int(p["N"]), int(p["width"])
    torus = bool(p.get("torus", mode == "gamma"))
    metrics, rows = [], []
    for r, spec in enumerate(seeds):
        rng = spec.rng()
        if mode == "loynes":
            L = loynes_grid(P, N, w, rng, torus=torus)
            right, left, cens = regeneration_scan(L.stationary)
            rows.append([r, L.monotone, L.plateau, L.stationary[w // 2], right, left, cens])
            metrics.append({"monotone": float(L.monotone), "plateau": float(L.plateau),
                            "W_origin": float(L.stationary[w // 2]), "censored": float(cens)})
            continue
        inp = sample_grid(w, N, P, rng, torus)
        if mode == "rows":
            H, W = simulate_growth(inp), simulate_service(inp)
            out.table(f"rows_r{r:03d}", ["n", "i", "v", "e", "H", "W"],
                      ([n + 1, i, inp.v[n, i], "r" if inp.e[n, i] else "l", H[n + 1, i], W[n + 1, i]]
                       for n in range(N) for i in range(w)))
            metrics.append({"H_over_N": float(H[-1].mean() / N), "W_mean": float(W[-1].mean())})
            continue
        h = _kernels.grid_target_paths(inp.v[None], inp.e[None], inp.torus, 0)[0, -1] / N
        H = simulate_growth(inp)[-1, 0] / N
        rows.append([r, P, N, h, H])
        metrics.append({"gamma": float(h), "H_over_N": float(H)})
    if mode == "loynes":
        out.table("loynes", ["rep", "monotone", "plateau", "W_origin", "right_idle", "left_idle", "censored"], rows)
    elif mode == "gamma":
        out.table("gamma_reps", ["rep", "p", "N", "h_over_N", "H_over_N"], rows)
        g, ci = mean_ci([m["gamma"] for m in metrics])
        out.table("gamma", ["p", "N", "gamma_hat", "ci_lo", "ci_hi", "plateau_rate"], [[P, N, g, ci[0], ci[1], None]])
    return metrics


EXPERIMENTS = {
    "rain": exp_rain, "continuous": exp_continuous, "chain": exp_chain, "clumps": exp_clumps,
    "branching": exp_branching, "stability": exp_stability, "grid": exp_grid,
}


# ------------------------------------------------------------------ orchestration


def _versions():
    import numba
    import scipy
    return {"poisson_hail": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "backend": _kernels.BACKEND}


def _run_one(cfg, root: Path, spec: SeedSpec, coupled_spec=None):
    """Execute one config into ``root``; returns (status, metrics, files, seed ledger, error)."""
    reps = int(cfg.get("replications", 1))
    seeds = [spec.child("rep", r) for r in range(reps)]
    out = Outputs(root, cfg.get("format", "csv"))
    fn = EXPERIMENTS[cfg["experiment"]]
    status, error, metrics = "ok", None, []
    try:
        if cfg["experiment"] == "stability":
            metrics = fn(cfg.get("params", {}), seeds, out, coupled_spec)
        else:
            metrics = fn(cfg.get("params", {}), seeds, out)
    except CapacityError as exc:
        status = "partial"
        error = {"error": "CapacityError", "message": str(exc), "completed": exc.completed}
    ledger = {f"rep{r}": s.entropy_id() for r, s in enumerate(seeds)}
    return status, metrics, [str(f) for f in out.files], ledger, error


def _file_entries(files, root: Path):
    return [{"path": str(Path(f).relative_to(root)), "sha256": sha256(f), "bytes": Path(f).stat().st_size}
            for f in sorted(set(files))]


def _write_manifest(root: Path, manifest: dict):
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=_plain) + "\n")
    return path


def _write_error(root: Path, record: dict):
    root.mkdir(parents=True, exist_ok=True)
    (root / "error.json").write_text(json.dumps(record, indent=2) + "\n")


def _out_dir(cfg, override):
    return Path(override or cfg.get("output") or "results")


def run(cfg: dict, out_dir=None) -> int:
    root = _out_dir(cfg, out_dir)
    root.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    spec = SeedSpec(int(cfg["seed"])).child(cfg["experiment"])
    status, metrics, files, ledger, error = _run_one(cfg, root, spec)
    manifest = {
        "config": cfg, "status": status, "seeds": ledger, "versions": _versions(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
        "wall_clock_s": round(time.time() - t0, 3), "outputs": _file_entries(files, root),
    }
    if error:
        manifest["error"] = error
        _write_error(root, error)
    _write_manifest(root, manifest)
    return EXIT_CAPACITY if status == "partial" else EXIT_OK


def _cell_task(args):
    cfg, root, spec, coupled_spec = args
    return _run_one(cfg, Path(root), spec, coupled_spec)


def workers() -> int:
    try:
        return max(1, int(os.environ.get("POISSON_HAIL_WORKERS", "1")))
    except ValueError:
        raise ConfigurationError("POISSON_HAIL_WORKERS must be an integer")


def sweep(cfg: dict, out_dir=None) -> int:
    """Run every grid cell; aggregate per-cell metrics in label order.

    In coupled mode every cell shares one seed stream and rain-type
    experiments draw at the largest swept intensity before thinning, so
    cells differ only through the swept parameter.
    """
    cells = expand_cells(cfg)
    if not cells:
        raise ConfigurationError("sweep needs a nonempty 'sweep' grid")
    root = _out_dir(cfg, out_dir)
    root.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    base = SeedSpec(int(cfg["seed"])).child(cfg["experiment"])
    coupled = bool(cfg.get("coupled", False))
    if coupled and "lam" in cfg["sweep"]:
        lam_max = max(float(v) for v in cfg["sweep"]["lam"])
        for c in cells:
            c["params"]["lam_max"] = lam_max
    tasks = []
    for k, cell in enumerate(cells):
        spec = base.child("coupled") if coupled else base.child("cell", k)
        tasks.append((cell, str(root / f"cell_{k:03d}"), spec, base.child("coupled") if coupled else None))
    n_workers = min(workers(), len(tasks))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_cell_task, tasks))
    else:
        results = [_cell_task(t) for t in tasks]
    keys = sorted(cfg["sweep"])
    metric_names = sorted({m for _, ms, *_ in results for rec in ms for m in rec})
    header = ["cell"] + keys + ["status", "replications"]
    for m in metric_names:
        header += [f"{m}_mean", f"{m}_se", f"{m}_ci_lo", f"{m}_ci_hi"]
    rows, entries = [], []
    for k, ((cell, croot, spec, _), (status, ms, files, ledger, error)) in enumerate(zip(tasks, results)):
        row = [k] + [_plain(cell["params"][key]) for key in keys] + [status, len(ms)]
        for m in metric_names:
            vals = np.array([rec[m] for rec in ms if m in rec], float)
            if vals.size == 0:
                row += [None] * 4
                continue
            mean, ci = mean_ci(vals)
            se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            row += [mean, se, ci[0], ci[1]]
        rows.append(row)
        if error:
            _write_error(Path(croot), error)
        entries.append({"cell": k, "params": {key: cell["params"][key] for key in keys}, "status": status,
                        "seeds": ledger, "outputs": _file_entries(files, root), "error": error})
    out = Outputs(root, "csv")
    out.table("sweep", header, rows)
    manifest = {
        "config": cfg, "status": "ok" if all(r[0] == "ok" for r in results) else "partial",
        "coupled": coupled, "versions": _versions(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
        "wall_clock_s": round(time.time() - t0, 3), "workers": n_workers,
        "cells": entries, "outputs": _file_entries(out.files, root),
    }
    _write_manifest(root, manifest)
    return EXIT_OK


def show_manifest(path, verify: bool = False) -> int:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    man = json.loads(path.read_text())
    root = path.parent
    print(f"experiment: {man['config']['experiment']}  status: {man['status']}  "
          f"wall clock: {man['wall_clock_s']} s  backend: {man['versions']['backend']}")
    entries = list(man.get("outputs", []))
    for c in man.get("cells", []):
        print(f"  cell {c['cell']}: {c['params']} {c['status']}")
        entries += c["outputs"]
    bad = 0
    for e in entries:
        flag = ""
        if verify:
            f = root / e["path"]
            ok = f.exists() and sha256(f) == e["sha256"]
            bad += not ok
            flag = "  ok" if ok else "  MISMATCH"
        print(f"  {e['path']}  {e['sha256'][:16]}  {e['bytes']} B{flag}")
    return EXIT_VERIFY if bad else EXIT_OK


# ------------------------------------------------------------------ entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="poisson-hail", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run one experiment"), ("sweep", "run a parameter grid")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("-o", "--output", help="output directory (overrides the config)")
    sp = sub.add_parser("validate-config", help="check a config against the schema")
    sp.add_argument("config")
    sp = sub.add_parser("show-manifest", help="summarize a run manifest")
    sp.add_argument("path")
    sp.add_argument("--verify", action="store_true", help="recompute output checksums")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = getattr(args, "output", None)
    try:
        if args.command == "show-manifest":
            return show_manifest(args.path, args.verify)
        cfg = load_config(args.config)
        if args.command == "validate-config":
            print("ok")
            return EXIT_OK
        if args.command == "sweep":
            return sweep(cfg, out)
        if cfg.get("sweep"):
            raise ConfigurationError("config has a 'sweep' grid; use the sweep command")
        return run(cfg, out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        if args.command in ("run", "sweep"):
            try:
                root = _out_dir({}, out) if out else None
                if root is None:
                    with open(args.config) as fh:
                        raw = yaml.safe_load(fh) or {}
                    root = _out_dir(raw if isinstance(raw, dict) else {}, None)
                _write_error(root, {"error": "ConfigurationError", "message": str(exc)})
            except (OSError, yaml.YAMLError):
                pass
        return EXIT_CONFIG
    except PoissonHailError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
