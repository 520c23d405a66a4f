"""Command-line entry point: predict, simulate, verify, mp-table, self-test.

Exit codes: 0 pass, 1 statistical failure, 2 operational error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import secrets
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from covfluct import __version__, stats
from covfluct.config import RunConfig, load_config, parse_config
from covfluct.ensemble import EnsembleSpec
from covfluct.errors import CovfluctError
from covfluct.fluct import default_workers, run_entry_fluctuations, run_resolvent_field
from covfluct.mp import (MpParams, mp_atom_weight, mp_density, predict_entry_clt,
                         predict_resolvent_field_cov, resolvent_cov_identity, stieltjes_g)
from covfluct.records import write_batch

log = logging.getLogger("covfluct")

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


# -- prediction assembly ---------------------------------------------------------

def entry_predictions(cfg: RunConfig, spec: EnsembleSpec) -> list:
    """One prediction per pair; overrides replace kappa4 or the variances."""
    f = cfg.test_function()
    params = spec.mp_params()
    kappa4 = spec.kappa4() if cfg.overrides.kappa4 is None else cfg.overrides.kappa4
    preds: list[Any] = [predict_entry_clt(f, params, spec.field, kappa4, i == j)
                        for i, j in cfg.pairs]
    if cfg.overrides.variances is not None:
        preds = list(cfg.overrides.variances)
    return preds


def block_targets(cfg: RunConfig) -> list[tuple[int, int, int, int]]:
    entries = [(i, j) for i, j in cfg.pairs if j <= cfg.m]
    npts = len(cfg.points)
    return [(i, j, a, b) for i, j in entries for a in range(npts) for b in range(a, npts)]


def block_predictions(cfg: RunConfig, spec: EnsembleSpec) -> tuple[dict, float]:
    """Predicted blocks and the largest disagreement between the two analytic routes."""
    params = spec.mp_params()
    kappa4 = spec.kappa4() if cfg.overrides.kappa4 is None else cfg.overrides.kappa4
    pts = cfg.complex_points()
    blocks, gap = {}, 0.0
    for i, j, a, b in block_targets(cfg):
        lit = predict_resolvent_field_cov(pts[a], pts[b], params, spec.field, kappa4, i, j)
        alt = resolvent_cov_identity(pts[a], pts[b], params, spec.field, kappa4, i, j)
        gap = max(gap, float(np.max(np.abs(lit - alt))))
        blocks[(i, j, a, b)] = lit
    return blocks, gap


# -- commands ----------------------------------------------------------------------

def cmd_predict(cfg: RunConfig, seed: int) -> dict[str, Any]:
    spec = cfg.ensemble_spec(seed)
    out: dict[str, Any] = {"c_N": spec.c_N, "kappa4": spec.kappa4()}
    if cfg.target == "entries":
        preds = entry_predictions(cfg, spec)
        out["entries"] = [
            {"pair": list(p), **(pr.to_dict() if hasattr(pr, "to_dict") else {"variance": pr})}
            for p, pr in zip(cfg.pairs, preds)]
    else:
        blocks, gap = block_predictions(cfg, spec)
        pts = cfg.complex_points()
        out["blocks"] = [
            {"entry": [i, j], "z": [pts[a].real, pts[a].imag], "w": [pts[b].real, pts[b].imag],
             "block": blk.tolist()} for (i, j, a, b), blk in blocks.items()]
        out["route_disagreement"] = gap
        out["g"] = [[z.real, z.imag, complex(stieltjes_g(z, spec.mp_params())).real,
                     complex(stieltjes_g(z, spec.mp_params())).imag] for z in pts]
    return out


def _simulate(cfg: RunConfig, seed: int, workers: int):
    spec = cfg.ensemble_spec(seed)
    if cfg.target == "entries":
        return run_entry_fluctuations(spec, cfg.test_function(), cfg.pairs, cfg.trials,
                                      cfg.centering, workers=workers)
    return run_resolvent_field(spec, cfg.complex_points(), cfg.m, cfg.trials, workers=workers)


def batch_summary(batch) -> list[dict[str, Any]]:
    flat = batch.valid().reshape(batch.valid().shape[0], -1)
    rows = []
    for k, target in enumerate(batch.target_ids()):
        col = flat[:, k]
        rows.append({"target": target, "mean_re": float(col.real.mean()),
                     "mean_im": float(col.imag.mean()) if np.iscomplexobj(col) else 0.0,
                     "var_re": float(col.real.var(ddof=1)),
                     "var_im": float(col.imag.var(ddof=1)) if np.iscomplexobj(col) else 0.0})
    return rows


def cmd_simulate(cfg: RunConfig, seed: int, workers: int, out_dir: Path) -> dict[str, Any]:
    batch = _simulate(cfg, seed, workers)
    csv_path, json_path = write_batch(batch, out_dir, config=cfg.model_dump(mode="json"))
    return {"batch_csv": str(csv_path), "batch_json": str(json_path),
            "failed_trials": len(batch.failed), "summary": batch_summary(batch)}


def run_tests(cfg: RunConfig, spec: EnsembleSpec, batch) -> list:
    tol, on = cfg.tolerances, cfg.tests
    reports: list = []
    if cfg.target == "entries":
        preds = entry_predictions(cfg, spec)
        if on.variance:
            reports += stats.variance_test(batch, preds, tol.rel_band, tol.band_abs)
        if on.ks:
            for k, pair in enumerate(batch.pairs):
                coords = batch.coordinates(k)
                want = stats.coordinate_predictions(preds[k], list(coords))
                for name, x in coords.items():
                    target = f"{pair[0]}-{pair[1]}:{name}"
                    if want[name] <= 0:
                        reports.append(stats.SkippedReport(target, "ks", "predicted variance is 0"))
                    elif x.size < stats.MIN_KS_SAMPLES:
                        reports.append(stats.SkippedReport(
                            target, "ks", f"fewer than {stats.MIN_KS_SAMPLES} samples"))
                    else:
                        reports.append(stats.ks_gaussian_test(x, want[name], target,
                                                              alpha=tol.ks_alpha))
        if on.independence and len(batch.pairs) > 1:
            combos = [(a, b) for x, a in enumerate(batch.pairs) for b in batch.pairs[x + 1:]]
            reports += stats.independence_test(batch, combos, tol.independence)
    elif on.cov_blocks:
        blocks, _ = block_predictions(cfg, spec)
        reports += stats.covariance_block_test(batch, blocks, tol.block_rel_band,
                                               tol.block_abs_band)
    return reports


def cmd_verify(cfg: RunConfig, seed: int, workers: int, out_dir: Path | None
               ) -> tuple[dict[str, Any], int]:
    spec = cfg.ensemble_spec(seed)
    batch = _simulate(cfg, seed, workers)
    if out_dir is not None and cfg.output.format in ("csv", "both"):
        write_batch(batch, out_dir, config=cfg.model_dump(mode="json"))
    try:
        reports = run_tests(cfg, spec, batch)
    except CovfluctError as exc:
        return {"reports": [{"kind": "error", "message": str(exc)}], "pass": False}, EXIT_ERROR
    dicts = [r.to_dict() for r in reports]
    ok = all(r.passed for r in reports)
    if out_dir is not None and cfg.output.format in ("csv", "both") and reports:
        stats.reports_to_csv(reports, Path(out_dir) / "reports.csv")
    return {"reports": dicts, "pass": ok}, (EXIT_PASS if ok else EXIT_FAIL)


def mp_table(params: MpParams, points: int = 101, eta: float = 0.1
             ) -> tuple[list[tuple[str, float, float]], list[tuple[float, float, float, float]]]:
    """Density rows on an edge-clustered grid over [u-, u+], the atom row, and g on a line.

    The grid x_k = u- + (u+ - u-) sin^2(theta_k), theta_k uniform on [0, pi/2],
    concentrates points where the density has square-root behaviour.
    """
    if points < 2:
        raise CovfluctError("mp-table needs at least 2 grid points")
    theta = np.linspace(0.0, math.pi / 2, points)
    xs = params.u_minus + (params.u_plus - params.u_minus) * np.sin(theta) ** 2
    xs[0], xs[-1] = params.u_minus, params.u_plus
    dens = np.asarray(mp_density(xs, params), dtype=float)
    rows = [("density", float(x), float(d)) for x, d in zip(xs, dens)]
    rows.append(("atom", 0.0, mp_atom_weight(params)))
    lo, hi = min(0.0, params.u_minus) - 0.5, params.u_plus + 0.5
    zs = np.linspace(lo, hi, points) + 1j * eta
    gs = np.asarray(stieltjes_g(zs, params))
    grows = [(float(z.real), float(z.imag), float(g.real), float(g.imag)) for z, g in zip(zs, gs)]
    return rows, grows


def cmd_mp_table(params: MpParams, points: int, out_dir: Path | None) -> dict[str, Any]:
    rows, grows = mp_table(params, points)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "mp_density.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("kind", "x", "value"))
            w.writerows(rows)
        with open(out_dir / "mp_stieltjes.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("z_re", "z_im", "g_re", "g_im"))
            w.writerows(grows)
    dens = [(x, v) for kind, x, v in rows if kind == "density"]
    xs = np.array([d[0] for d in dens])
    vs = np.array([d[1] for d in dens])
    mass = float(np.sum(0.5 * (vs[1:] + vs[:-1]) * np.diff(xs))) + rows[-1][2]
    return {"sigma2": params.sigma2, "c": params.c, "u_minus": params.u_minus,
            "u_plus": params.u_plus, "atom": rows[-1][2], "trapezoid_mass": mass,
            "rows": len(dens)}


def cmd_self_test(seed: int) -> tuple[dict[str, Any], bool]:
    """KS calibration, variance-CI coverage and a few analytic identities."""
    from covfluct.ensemble import trial_rng
    from covfluct.mp import mp_integrate, quadratic_residual

    null_pass = power_pass = covered = 0
    for r in range(100):
        x = trial_rng(seed, r, stream=1).standard_normal(5000)
        null_pass += stats.ks_gaussian_test(x, 1.0).p_value_approx > 0.01
        power_pass += stats.ks_gaussian_test(x, 4.0).p_value_approx < 0.01
        y = 1.7 * trial_rng(seed, r, stream=2).standard_normal(1000)
        _, (lo, hi) = stats.variance_ci(y)
        covered += lo <= 1.7 ** 2 <= hi
    point_mass = stats.ks_gaussian_test(np.zeros(1000), 1.0).ks_statistic
    norm_err = max(abs(mp_integrate(lambda x: np.ones_like(x), MpParams(1.0, c)) - 1.0)
                   for c in (0.25, 0.5, 1.0, 2.0, 4.0))
    zs = np.array([2j, 1 + 1j, -1.0, 8.0, 3 - 0.5j])
    resid = max(float(np.max(np.abs(quadratic_residual(zs, stieltjes_g(zs, MpParams(1.0, c)),
                                                       MpParams(1.0, c)))))
                for c in (0.5, 1.0, 2.0))
    checks = {
        "ks_null_calibration": {"value": null_pass, "pass": null_pass >= 98},
        "ks_power": {"value": power_pass, "pass": power_pass == 100},
        "ks_point_mass": {"value": point_mass, "pass": point_mass == 0.5},
        "variance_ci_coverage": {"value": covered, "pass": covered >= 90},
        "mp_normalization": {"value": norm_err, "pass": norm_err < 1e-10},
        "stieltjes_quadratic_residual": {"value": resid, "pass": resid < 1e-12},
    }
    return checks, all(c["pass"] for c in checks.values())


# -- argument handling ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covfluct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--trials", type=int, help="override the number of trials")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="trial worker threads")
        p.add_argument("--format", choices=("json", "csv", "both"), help="report format")

    common(sub.add_parser("predict", help="tabulate limiting variances and covariance blocks"))
    common(sub.add_parser("simulate", help="run Monte-Carlo trials and write the batch"))
    common(sub.add_parser("verify", help="simulate and test against predictions"))
    mp = sub.add_parser("mp-table", help="density and Stieltjes transform tables")
    common(mp, config_required=False)
    mp.add_argument("--sigma2", type=float, default=None)
    mp.add_argument("--c", type=float, default=None)
    mp.add_argument("--grid", type=int, default=101, help="number of density grid points")
    st = sub.add_parser("self-test", help="calibration of the statistical tests")
    st.add_argument("--seed", type=int, default=None)
    st.add_argument("--out", default=None)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    data = cfg.model_dump(mode="json")
    if args.trials is not None:
        data["trials"] = args.trials
    if args.seed is not None:
        data["seed"] = args.seed
    if args.workers is not None:
        data["workers"] = args.workers
    if args.out is not None:
        data["output"]["dir"] = args.out
    if args.format is not None:
        data["output"]["format"] = args.format
    if data.get("seed") is None:
        data["seed"] = secrets.randbits(64)
    return parse_config(data)


def _emit(document: dict[str, Any], out_dir: Path | None, name: str) -> None:
    text = json.dumps(document, indent=2, sort_keys=True, default=_json_default)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text + "\n")
    print(text)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        if args.command == "self-test":
            seed = args.seed if args.seed is not None else secrets.randbits(64)
            checks, ok = cmd_self_test(seed)
            _emit({"version": __version__, "config": {"command": "self-test"}, "reports": checks,
                   "pass": ok, "seed": seed, "wall_ms": _ms(start)},
                  Path(args.out) if args.out else None, "self_test.json")
            return EXIT_PASS if ok else EXIT_FAIL
        if args.command == "mp-table":
            if args.config:
                cfg = resolve_config(args)
                spec = cfg.ensemble_spec(cfg.seed)
                params = MpParams(args.sigma2 or spec.sigma2, args.c or spec.c_N)
            else:
                params = MpParams(args.sigma2 or 1.0, args.c or 1.0)
            result = cmd_mp_table(params, args.grid, Path(args.out) if args.out else None)
            print(json.dumps(result, indent=2))
            return EXIT_PASS

        cfg = resolve_config(args)
        seed = cfg.seed
        workers = cfg.workers or default_workers()
        out_dir = Path(cfg.output.dir) if args.out is not None or args.command != "predict" else None
        echo = cfg.model_dump(mode="json")
        if args.command == "predict":
            body = cmd_predict(cfg, seed)
            _emit({"version": __version__, "config": echo, "reports": body, "pass": True,
                   "seed": seed, "wall_ms": _ms(start)}, out_dir, "predict.json")
            return EXIT_PASS
        if args.command == "simulate":
            body = cmd_simulate(cfg, seed, workers, Path(cfg.output.dir))
            _emit({"version": __version__, "config": echo, "reports": body, "pass": True,
                   "seed": seed, "wall_ms": _ms(start)}, None, "simulate.json")
            return EXIT_PASS
        body, code = cmd_verify(cfg, seed, workers, Path(cfg.output.dir))
        _emit({"version": __version__, "config": echo, "reports": body["reports"],
               "pass": body["pass"], "seed": seed, "wall_ms": _ms(start)},
              Path(cfg.output.dir), "report.json")
        return code
    except (CovfluctError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _ms(start: float) -> float:
    return round(1000.0 * (time.perf_counter() - start), 3)


if __name__ == "__main__":
    sys.exit(main())
