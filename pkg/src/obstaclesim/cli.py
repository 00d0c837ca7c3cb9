"""Command-line front end: single runs, ensembles, verification suites,
penalty-scale studies, and assumption audits.

All file output is atomic (temp file + rename in the target directory), CSV
with a header row plus provenance comments, or JSON.  Exit codes: 0 success,
2 configuration/validation failure, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .config import (ConfigError, config_hash, list_presets, load_config,
                     preset_config, serialize_config)
from .kinetics import DefectAssembler, KineticResidualAssembler
from .model import audit_assumptions
from .solver import (NumericalAbort, build_noise, run_ensemble,
                     run_trajectory, worker_count, _SERIES)
from . import verify as V

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3


# ---------------------------------------------------------------------------
# Atomic output helpers

def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance(cfg, path_id=None) -> str:
    lines = [f"# obstaclesim {__version__}",
             f"# config_hash {config_hash(cfg)}",
             f"# master_seed {cfg.master_seed}"]
    if path_id is not None:
        lines.append(f"# path_id {path_id}")
    return "\n".join(lines) + "\n"


def _csv(cfg, header, rows, path_id=None) -> str:
    out = [_provenance(cfg, path_id), ",".join(header) + "\n"]
    for row in rows:
        out.append(",".join(_fmt(v) for v in row) + "\n")
    return "".join(out)


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# Output writers

def write_trajectory_csv(path, rec) -> None:
    t = rec.recorded_times
    cols = [t] + [rec.recorded(getattr(rec, name)) for name in
                  ("mass_l1", "energy_l2sq", "min_u", "penalty_l1",
                   "reflected_cum")]
    rows = zip(*cols)
    _atomic_write(path, _csv(rec.config,
                             ["t", "mass_l1", "energy_l2sq", "min_u",
                              "penalty_l1", "reflected_cum"],
                             rows, rec.config.path_id))


def write_snapshots_csv(path, rec) -> None:
    x = rec.config.mesh().cell_centers
    rows = []
    for t in sorted(rec.snapshots):
        u, psi = rec.snapshots[t]
        for i in range(len(x)):
            rows.append((t, x[i], u[i], psi[i]))
    if not rows:  # always include the final state
        psi_T = rec.config.obstacle().eval(x, rec.config.T)
        rows = [(rec.config.T, x[i], rec.u_final[i], psi_T[i])
                for i in range(len(x))]
    _atomic_write(path, _csv(rec.config, ["t", "x", "u", "psi"], rows,
                             rec.config.path_id))


def write_measures_csv(path, rec) -> None:
    acc = rec.measures
    lg = acc.level
    rows = []
    for comp in ("m", "lam"):
        arr = acc.component(comp).sum(axis=0)  # (nbins+1, nt)
        for b in range(lg.nbins + 1):
            lo = lg.edges[b] if b < lg.nbins else lg.xi_max
            hi = lg.edges[b + 1] if b < lg.nbins else float("inf")
            for tb in range(acc.n_tbins):
                if arr[b, tb] != 0.0:
                    rows.append((comp, tb, lo, hi, arr[b, tb]))
    _atomic_write(path, _csv(rec.config,
                             ["component", "t_bin", "xi_lo", "xi_hi", "mass"],
                             rows, rec.config.path_id))


def write_nu_csv(path, rec) -> None:
    acc = rec.measures
    rows = [(tb, i, acc.nu[i, tb])
            for i in range(acc.n_cells) for tb in range(acc.n_tbins)
            if acc.nu[i, tb] != 0.0]
    _atomic_write(path, _csv(rec.config, ["t_bin", "cell", "mass"], rows,
                             rec.config.path_id))


def write_residuals_csv(path, cfg, reports) -> None:
    rows = []
    for rep in reports:
        for term, val in rep.terms.items():
            rows.append((rep.phi_label, term, val, rep.residual))
    _atomic_write(path, _csv(cfg, ["phi_id", "term", "value", "residual"],
                             rows, cfg.path_id))


def _audit_dict(cfg):
    mesh = cfg.mesh()
    nz = build_noise(cfg, mesh)
    lg = cfg.level_grid(mesh)
    report = audit_assumptions(cfg.coefficients(), nz.ff, cfg.obstacle(),
                               lg.xi_max)
    return report.as_dict()


def write_summary_json(path, cfg, extra) -> None:
    body = {"version": __version__,
            "config_hash": config_hash(cfg),
            "config": serialize_config(cfg),
            "master_seed": cfg.master_seed}
    body.update(extra)
    _atomic_write(path, json.dumps(body, indent=2, default=_json_default)
                  + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not np.isfinite(o):
        return str(o)
    return str(o)


# ---------------------------------------------------------------------------
# Subcommands

def _load(args):
    if args.preset:
        return preset_config(args.preset)
    if not args.config:
        raise ConfigError("provide --config FILE or --preset NAME")
    return load_config(args.config)


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.path_id is not None:
        from dataclasses import replace
        cfg = replace(cfg, path_id=args.path_id)
    probes = []
    if args.kinetics:
        mesh = cfg.mesh()
        nz = build_noise(cfg, mesh)
        lg = cfg.level_grid(mesh)
        from .kinetics import default_test_functions
        phis = default_test_functions(cfg.T, 0.05 * lg.xi_max,
                                      0.95 * lg.xi_max)
        probes.append(KineticResidualAssembler(
            phis, mesh, cfg.coefficients(), nz.ff, nz.modes, cfg.epsilon,
            cfg.alpha, cfg.side == "upper"))
    rec = run_trajectory(cfg, probes=tuple(probes))
    os.makedirs(args.out, exist_ok=True)
    write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), rec)
    write_snapshots_csv(os.path.join(args.out, "snapshots.csv"), rec)
    write_measures_csv(os.path.join(args.out, "measures.csv"), rec)
    write_nu_csv(os.path.join(args.out, "nu.csv"), rec)
    if args.kinetics:
        reports = rec.probe_results["KineticResidualAssembler"]
        write_residuals_csv(os.path.join(args.out, "kinetic_residuals.csv"),
                            cfg, reports)
    final = {"t_final": cfg.T,
             "mass_l1": float(rec.mass_l1[-1]),
             "mass_init": rec.mass_init,
             "reflected_total": float(rec.reflected_cum[-1]),
             "min_u": float(rec.min_u.min()),
             "lam_total": float(rec.measures.total("lam")),
             "m_total": float(rec.measures.total("m")),
             "overflow": int(rec.measures.overflow_count),
             "nsteps": rec.nsteps, "dt": rec.dt}
    write_summary_json(os.path.join(args.out, "summary.json"), cfg,
                       {"path_id": cfg.path_id, "final": final,
                        "audit": _audit_dict(cfg)})
    print(f"run complete: config {config_hash(cfg)} seed {cfg.master_seed} "
          f"path {cfg.path_id} -> {args.out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = _load(args)
    stats, _ = run_ensemble(cfg, args.paths)
    os.makedirs(args.out, exist_ok=True)
    header = ["t"]
    cols = [stats.times]
    for name in _SERIES:
        header += [f"{name}_mean", f"{name}_sem"]
        cols += [stats.mean(name), stats.sem(name)]
    _atomic_write(os.path.join(args.out, "ensemble.csv"),
                  _csv(cfg, header, zip(*cols)))
    write_summary_json(os.path.join(args.out, "summary.json"), cfg,
                       {"paths": args.paths, "workers": worker_count(),
                        "final_means": {name: float(stats.mean(name)[-1])
                                        for name in _SERIES}})
    print(f"ensemble complete: {args.paths} paths, config {config_hash(cfg)} "
          f"-> {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = V.fast_suite() if args.suite == "fast" else V.full_suite()
    os.makedirs(args.out, exist_ok=True)
    rows = [(r.check_id, r.status, r.observed, r.tolerance,
             hash_context(r)) for r in results]
    lines = ["# obstaclesim " + __version__,
             "check_id,status,observed,tolerance,context_hash"]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    _atomic_write(os.path.join(args.out, "checks.csv"),
                  "\n".join(lines) + "\n")

    md = ["# Verification report", "",
          f"Suite: {args.suite}. "
          f"{sum(r.passed for r in results)}/{len(results)} checks passed.",
          ""]
    for r in results:
        md.append(f"## {r.check_id}: {r.status}")
        md.append("")
        md.append(f"- observed: `{r.observed:.6g}`   tolerance: "
                  f"`{r.tolerance:.6g}`")
        md.append(f"- {r.details}")
        md.append("")
    _atomic_write(os.path.join(args.out, "report.md"), "\n".join(md) + "\n")

    for r in results:
        print(f"{r.status:4s} {r.check_id}")
    ok = all(r.passed for r in results)
    print(f"{'all checks passed' if ok else 'SOME CHECKS FAILED'} "
          f"-> {args.out}")
    return EXIT_OK if ok else 1


def hash_context(r) -> str:
    import hashlib
    blob = json.dumps(r.context, sort_keys=True, default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()[:10]


def cmd_study_epsilon(args) -> int:
    cfg = _load(args)
    eps = tuple(float(tok) for tok in args.eps.split(","))
    study = V.epsilon_study(cfg, eps)
    os.makedirs(args.out, exist_ok=True)
    rows = [(e, p, l) for e, p, l in
            zip(study.eps, study.penalty_l1, study.lam_totals)]
    _atomic_write(os.path.join(args.out, "study.csv"),
                  _csv(cfg, ["epsilon", "penalty_l1", "lam_total"], rows))
    write_summary_json(os.path.join(args.out, "summary.json"), cfg,
                       {"slope": study.slope, "monotone": study.monotone,
                        "violations": study.violations,
                        "nu_cauchy": study.nu_cauchy})
    print(f"epsilon study: slope {study.slope:.3f} "
          f"(monotone={study.monotone}) -> {args.out}")
    return EXIT_OK


def cmd_list_scenarios(_args) -> int:
    for name, desc in list_presets().items():
        print(f"{name:15s} {desc}")
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = _load(args)
    report = _audit_dict(cfg)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _atomic_write(os.path.join(args.out, "audit.json"),
                      json.dumps(report, indent=2, default=_json_default)
                      + "\n")
    for item in report["items"]:
        ok = item["status"] in ("pass", "report")
        print(f"{'pass' if ok else 'FAIL':4s} {item['assumption_id']:14s}"
              f" {item['note']}")
    print("audit:", "all-pass" if report["all_pass"] else "FAILURES")
    return EXIT_OK if report["all_pass"] else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sim",
        description="1-D finite-volume simulator for penalized obstacle "
                    "problems with conservative noise")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=True):
        p.add_argument("--config", help="sectioned key=value config file")
        p.add_argument("--preset", help="named built-in scenario")
        p.add_argument("--out", required=out_required,
                       help="output directory")

    p = sub.add_parser("run", help="single trajectory")
    add_common(p)
    p.add_argument("--path-id", type=int, default=None)
    p.add_argument("--kinetics", action="store_true",
                   help="also assemble weak kinetic residuals")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("ensemble", help="Monte-Carlo ensemble")
    add_common(p)
    p.add_argument("--paths", type=int, required=True)
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("verify", help="property-check suite")
    p.add_argument("--suite", choices=("fast", "full"), default="fast")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("study-epsilon", help="penalty-scale sweep")
    add_common(p)
    p.add_argument("--eps", default="0.1,0.05,0.025,0.0125",
                   help="comma-separated epsilon values")
    p.set_defaults(fn=cmd_study_epsilon)

    p = sub.add_parser("list-scenarios", help="shipped presets")
    p.set_defaults(fn=cmd_list_scenarios)

    p = sub.add_parser("audit", help="structural-assumption audit")
    add_common(p, out_required=False)
    p.set_defaults(fn=cmd_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc} (t={exc.t}, step={exc.step})",
              file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
