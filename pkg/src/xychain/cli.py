"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 invariant-suite failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import checks
from . import freefermion as ff
from . import localization as loc
from .config import RunConfig, load_config
from .ensemble import default_workers, run_ensemble
from .model import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 1, 2, 3
MANIFEST = "manifest.json"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return "" if x is None else str(x)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, data) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def update_manifest(out: Path, entry: dict) -> None:
    """Append a run record and refresh checksums of every file in ``out``."""
    path = out / MANIFEST
    manifest = {"runs": []}
    if path.exists():
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            manifest = {"runs": []}
    manifest.setdefault("runs", []).append(entry)
    manifest["files"] = {
        p.name: sha256(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != MANIFEST
    }
    write_json(path, manifest)


# --------------------------------------------------------------------------
# commands; each returns (list of written files, exit code)


def _diag_task(index, chain):
    diag = ff.diagonalize_chain(chain)
    a = np.abs(diag.lam)
    return None, (diag.path, -float(a.sum()), 2.0 * float(a.min()), diag.lam.copy())


def cmd_diagonalize(rc: RunConfig, out: Path, workers: int):
    res = run_ensemble(rc.ensemble, _diag_task, workers)
    seed = rc.ensemble.disorder.base_seed
    summary = write_csv(out / "diagonalize.csv", ["realization", "seed", "path", "E0", "gap"],
                        [(i, seed, p, e0, g) for i, (p, e0, g, _) in enumerate(res.records)])
    spectra = write_csv(out / "spectrum.csv", ["realization", "j", "lambda"],
                        [(i, j + 1, lam) for i, rec in enumerate(res.records) for j, lam in enumerate(rec[3])])
    return [summary, spectra], EXIT_OK


def _dynloc_files(rep: loc.LocalizationReport, out: Path, stem: str = "dynloc"):
    table = write_csv(
        out / f"{stem}.csv",
        ["j", "k", "distance", "grid_sup_mean", "eigencorr_mean", "stderr"],
        zip(rep.j, rep.k, rep.distance, rep.grid_sup_mean, rep.eigencorr_mean, rep.grid_sup_stderr),
    )
    return table, write_json(out / f"{stem}.json", rep.summary())


def cmd_dynloc(rc: RunConfig, out: Path, workers: int):
    rep = loc.dynloc_correlator(rc.ensemble, workers)
    return list(_dynloc_files(rep, out)), EXIT_OK


def cmd_lr(rc: RunConfig, out: Path, workers: int):
    pair = rc.pair()
    rep = loc.dynloc_correlator(rc.ensemble, workers)
    files = list(_dynloc_files(rep, out))
    lr = loc.lr_bound_check(rc.ensemble, pair, rep, rc.sites, workers)
    st = loc.small_time_profile(rc.ensemble, pair, rc.sites, rc.smalltime_step, rep, workers)
    s = lr.sweep
    files.append(write_csv(out / "lr.csv", ["k", "distance", "sup_mean", "stderr", "bound", "satisfied"],
                           zip(s.sites, s.distance, s.sup_mean, s.sup_stderr, lr.bound, lr.satisfied)))
    sts = st.sweep
    files.append(write_csv(out / "smalltime.csv", ["k", "t", "mean", "stderr"],
                           [(k, t, sts.mean[a, b], sts.stderr[a, b])
                            for a, k in enumerate(sts.sites) for b, t in enumerate(sts.times)]))
    files.append(write_json(out / "lr.json", {
        "C": lr.C, "eta": lr.eta, "C_prime": lr.C_prime, "all_satisfied": bool(np.all(lr.satisfied)),
        "smalltime_slope": st.slope, "smalltime_envelope_slope": st.envelope_slope,
        "smalltime_normalized_slope": st.normalized_slope, "predicted_c": st.predicted_c,
        "realizations": s.realizations, "seed": rc.ensemble.disorder.base_seed,
    }))
    return files, EXIT_OK


def cmd_cluster(rc: RunConfig, out: Path, workers: int):
    pair = rc.pair()
    eta = rc.eta
    files = []
    if eta is None:
        rep = loc.dynloc_correlator(rc.ensemble, workers)
        files.extend(_dynloc_files(rep, out))
        if rep.envelope_eta is None:
            raise loc.NotLocalizedError("no positive decay rate for the clustering bound; set eta explicitly")
        eta = rep.envelope_eta
    rows = loc.clustering_check(rc.ensemble, pair, eta, workers=workers)
    files.append(write_csv(
        out / "cluster.csv",
        ["realization", "gamma", "oracle_gap", "d", "C_JK", "alpha", "lambda", "lhs", "rhs", "eta",
         "satisfied", "within_tolerance", "flagged", "skipped"],
        [(r.index, r.gamma, r.oracle_gap, r.d, r.C_JK, r.alpha, r.lam, r.lhs, r.rhs, r.eta,
          r.satisfied, r.within_tolerance, r.flagged, r.skipped) for r in rows],
    ))
    live = [r for r in rows if r.skipped is None]
    frac = sum(r.within_tolerance for r in live) / len(live) if live else float("nan")
    files.append(write_json(out / "cluster.json", {
        "eta": eta, "rows": len(rows), "nondegenerate": len(live), "fraction_within_tolerance": frac,
        "flagged": sum(r.flagged for r in live), "realizations": len(rows),
        "seed": rc.ensemble.disorder.base_seed,
    }))
    return files, EXIT_OK


def cmd_gapstats(rc: RunConfig, out: Path, workers: int):
    rep = loc.wegner_gap_stats(rc.ensemble, rc.epsilon, workers=workers)
    files = [
        write_csv(out / "gapstats.csv", ["epsilon", "epsilon_n", "probability"],
                  zip(rep.epsilon_grid, rep.epsilon_grid * rep.n, rep.empirical_prob)),
        write_csv(out / "gap_hist.csv", ["gap_lo", "gap_hi", "count"],
                  zip(rep.gap_hist_edges[:-1], rep.gap_hist_edges[1:], rep.gap_hist_counts)),
        write_json(out / "gapstats.json", {"n": rep.n, "slope": rep.slope_estimate,
                                           "realizations": int(rep.distances.size),
                                           "seed": rc.ensemble.disorder.base_seed}),
    ]
    return files, EXIT_OK


def cmd_correlations(rc: RunConfig, out: Path, workers: int):
    rep = loc.correlation_decay_sweep(rc.ensemble, workers=workers)
    files = [write_csv(out / "correlations.csv", ["j", "k", "distance", "two_point_mean", "stderr"],
                       zip(rep.j, rep.k, rep.distance, rep.two_point_mean, rep.two_point_stderr))]
    if rep.oracle_sites is not None:
        files.append(write_csv(out / "oracle_zz.csv", ["k", "distance", "zz_mean"],
                               zip(rep.oracle_sites, rep.oracle_sites - rep.oracle_sites[0] + 1, rep.oracle_zz_mean)))

    def fit_dict(f):
        return None if f is None else {"C": f.C, "eta": f.eta, "r2": f.r2, "power_law_r2": f.power_r2,
                                       "window": list(f.window)}

    files.append(write_json(out / "correlations.json", {
        "fit": fit_dict(rep.fit), "exponential": rep.exponential, "oracle_fit": fit_dict(rep.oracle_fit),
        "skipped_degenerate": rep.skipped, "realizations": rep.realizations,
        "seed": rc.ensemble.disorder.base_seed,
    }))
    return files, EXIT_OK


def cmd_verify(rc: RunConfig, out: Path, workers: int, corrupt: bool = False):
    if rc.ensemble.oracle_cap < 6:
        raise ConfigError("verify needs oracle_cap >= 6")
    results = checks.run_suite(rc.ensemble, rc.verify_realizations, corrupt=corrupt)
    for r in results:
        print(r.line())
    path = write_csv(out / "verify.csv", ["check", "residual", "tolerance", "passed", "seed", "realization"],
                     [(r.name, r.residual, r.tolerance, r.passed, r.seed, r.realization) for r in results])
    ok = all(r.passed for r in results)
    return [path], EXIT_OK if ok else EXIT_INVARIANT


COMMANDS = {
    "diagonalize": cmd_diagonalize,
    "dynloc": cmd_dynloc,
    "lr": cmd_lr,
    "cluster": cmd_cluster,
    "gap-stats": cmd_gapstats,
    "correlations": cmd_correlations,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xychain", description="Disordered XY chain localization laboratory.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: $XYCHAIN_WORKERS or 1)")
    p.add_argument("--seed", type=int, default=None, help="override the base seed")
    p.add_argument("--corrupt-w", action="store_true", help="verify only: flip one column of W (negative control)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = datetime.now(timezone.utc).isoformat()
    try:
        rc = load_config(args.config)
        if args.seed is not None:
            rc = rc.with_seed(args.seed)
        workers = default_workers() if args.workers is None else args.workers
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        func = COMMANDS[args.command]
        if args.command == "verify":
            files, code = func(rc, out, workers, corrupt=args.corrupt_w)
        else:
            files, code = func(rc, out, workers)
    except (ConfigError, loc.FitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, loc.NotLocalizedError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    update_manifest(out, {
        "command": args.command,
        "config_path": os.path.abspath(args.config),
        "config": rc.as_dict(),
        "output_dir": str(out.resolve()),
        "workers": workers,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [f.name for f in files],
        "exit_code": code,
    })
    for f in files:
        print(f)
    return code


if __name__ == "__main__":
    sys.exit(main())
