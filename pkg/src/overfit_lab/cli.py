"""overfit-lab command line.

    overfit-lab <command> --config cfg.json --out rundir [--seed N] [--paths N]
                [--threads N] [--annualize 252|12|1]

Exit status: 0 ok, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analytic, calibration, simulation
from .errors import NumericalError, OverfitLabError, ValidationError
from .estimation import PanelGrouping
from .model import BacktestWindow, ModelSpec
from .reporting import emit_plot_data, file_sha256, manifest, write_csv, write_json, write_ndjson

COMMANDS = ("analytic", "simulate", "mc-check", "calibrate", "resample", "epsilon", "kan-compare")


class JobError(OverfitLabError):
    def __init__(self, where, exc):
        super().__init__(f"{where}: {exc}")
        self.exit_code = getattr(exc, "exit_code", 2)


def _at(where, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except OverfitLabError as exc:
        raise JobError(where, exc) from exc
    except np.linalg.LinAlgError as exc:
        raise JobError(where, NumericalError(str(exc))) from exc


def _need(cfg, key, where="config"):
    if key not in cfg:
        raise ValidationError(f"{where} is missing '{key}'")
    return cfg[key]


def _spec(d, where):
    try:
        return ModelSpec.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: bad model spec ({exc})") from None


def _window(d, where):
    try:
        return BacktestWindow(int(_need(d, "t1", where)), int(d.get("t2", 1)))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: bad window ({exc})") from None


def _jobs(cfg, base_dir):
    if "jobs_file" in cfg:
        path = _resolve(cfg["jobs_file"], base_dir).resolve()
        cfg["jobs_file"] = str(path)
        jobs = _read_json(path)
    else:
        jobs = _need(cfg, "jobs")
    if not isinstance(jobs, list):
        raise ValidationError("jobs must be a JSON array")
    out = []
    for i, j in enumerate(jobs):
        where = f"job {i}"
        out.append((_spec(_need(j, "spec", where), where), _window(_need(j, "window", where), where)))
    return out


def _resolve(path, base_dir):
    p = Path(path)
    if not p.is_absolute() and base_dir is not None and not p.exists():
        p = base_dir / p
    if not p.exists():
        raise ValidationError(f"input file not found: {path}")
    return p


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"input file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _fit(d):
    if d is None:
        return simulation.OLSFit()
    if isinstance(d, str):
        d = {"kind": d}
    kind = d.get("kind", "ols")
    if kind == "ols":
        return simulation.OLSFit()
    if kind == "ridge":
        return simulation.RidgeFit(float(d.get("gamma", 0.1)))
    if kind == "panel":
        if "grouping" in d:
            return simulation.PanelFit(PanelGrouping.from_dict(d["grouping"]))
        fam = _need(d, "momentum_families", "panel fit")
        return simulation.PanelFit(PanelGrouping.momentum_families(
            int(_need(fam, "m", "momentum_families")), int(_need(fam, "n_families", "momentum_families")),
            fam.get("intercepts", "per_asset")))
    raise ValidationError(f"unknown fit kind {kind!r}")


def _sr_cols(row, cols, ann):
    for c in cols:
        v = row.get(c)
        if isinstance(v, (int, float)) and v != "":
            row[c] = v * ann
    return row


# ---------------------------------------------------------------- commands

def cmd_analytic(cfg, out, ann, threads, base_dir):
    rows = []
    jobs = _jobs(cfg, base_dir)
    for i, (spec, win) in enumerate(jobs):
        rows.append(_at(f"job {i}", analytic.analytic_row, spec, win, ann))
    files = [write_csv(out / "analytic.csv", rows, analytic.ANALYTIC_COLUMNS)]
    for j, plot in enumerate(cfg.get("plots", [])):
        kind = _need(plot, "kind", f"plot {j}")
        where = f"plot {j} ({kind})"
        if kind == "replication_vs_t1":
            spec, _ = jobs[int(plot.get("job", 0))]
            data = _at(where, analytic.replication_vs_t1, spec, plot["t1_values"], 1, ann)
        elif kind == "replication_vs_p":
            data = _at(where, analytic.replication_vs_p, float(plot["sr_eis"]), plot["p_values"],
                       plot.get("m_values", [1]), int(plot["t1"]))
        elif kind == "heatmap_sr_t1":
            data = _at(where, analytic.heatmap_sr_t1, plot["sr_values"], plot["t1_values"])
            data = [_sr_cols(r, ["sr_true"], ann) for r in data]
        else:
            raise ValidationError(f"{where}: not an analytic plot kind")
        files.append(emit_plot_data(data, kind, out / f"plot_{j}_{kind}.csv"))
    return files, []


def _model_from_cfg(cfg, where="config"):
    if "random_model" in cfg:
        rm = cfg["random_model"]
        return simulation.sample_random_model(
            int(_need(rm, "m", "random_model")), int(_need(rm, "p", "random_model")),
            rm.get("target_sr"), int(rm.get("seed", 0)), float(rm.get("eta", 2.0)))
    return _spec(_need(cfg, "spec", where), where)


def cmd_simulate(cfg, out, ann, threads, base_dir):
    spec = _at("model", _model_from_cfg, cfg)
    win = _window(_need(cfg, "window"), "window")
    if "scale_to_sr_eis" in cfg:
        spec = _at("scaling", analytic.scale_for_expected_sharpe, spec, win, float(cfg["scale_to_sr_eis"]), "eis")
    sim_cfg = simulation.SimulationConfig.from_dict(
        {**cfg.get("simulation", {}), "n_paths": cfg["n_paths"], "seed": cfg["seed"]})
    res = _at("simulate", simulation.monte_carlo_experiment, spec, win, sim_cfg, _fit(cfg.get("fit")),
              cfg.get("cov", "true"), threads, False)
    body = res.to_dict()
    body["spec"] = spec.to_dict()
    body["annualization_factor"] = ann
    files = [write_json(out / "experiment.json", body),
             write_csv(out / "experiment.csv", res.summary_rows(ann),
                       ["quantity", "analytic", "simulated", "se", "z"])]
    return files, []


def _suite(cfg):
    if "suite" in cfg:
        return [(_spec(_need(j, "spec", f"suite {i}"), f"suite {i}"), _window(_need(j, "window", f"suite {i}"), f"suite {i}"))
                for i, j in enumerate(cfg["suite"])]
    rs = _need(cfg, "random_suite")
    rng = np.random.default_rng(int(rs.get("seed", 0)))
    out = []
    t1s = rs.get("t1_values", [252])
    srs = rs.get("target_sr", [0.05])
    for i in range(int(rs.get("n_specs", 5))):
        m = int(rng.integers(1, int(rs.get("m_max", 4)) + 1))
        p = int(rng.integers(1, int(rs.get("p_max", 4)) + 1))
        sr = float(srs[i % len(srs)])
        spec = simulation.sample_random_model(m, p, sr, int(rs.get("seed", 0)) * 1000 + i)
        out.append((spec, BacktestWindow(int(t1s[i % len(t1s)]), int(rs.get("t2", 252)))))
    return out


def mc_check_rows(suite, n_paths, seed, threads=1, z_max=3.0, var_rel=0.03):
    rows = []
    for i, (spec, win) in enumerate(suite):
        cfg = simulation.SimulationConfig(n_paths=n_paths, seed=seed + i)
        paths, _ = _at(f"spec {i}", simulation.simulate_paths, spec, win, cfg, n_threads=threads)
        ana = _at(f"spec {i}", analytic.expected_moments_general, spec, win)
        sim = simulation._aggregate(paths, None)
        pm = win.t1 and spec.p / win.t1
        checks = [("is_mean", ana.is_mean), ("oos_mean", ana.oos_mean), ("oos_var", ana.oos_var),
                  ("is_minus_oos_mean", ana.is_mean - ana.oos_mean), ("is_var", ana.is_var)]
        for q, a in checks:
            val, se = sim[q]
            z = (val - a) / se if se > 0 else math.nan
            if q == "is_var":
                applicable = pm < 0.1
                ok = (abs(val - a) <= var_rel * abs(a) + z_max * se) if applicable else None
            else:
                ok = abs(z) <= z_max
            rows.append({"spec": i, "m": spec.m, "p": spec.p, "t1": win.t1, "quantity": q,
                         "analytic": a, "simulated": val, "se": se, "z": z,
                         "pass": "" if ok is None else bool(ok)})
    return rows


def cmd_mc_check(cfg, out, ann, threads, base_dir):
    rows = mc_check_rows(_suite(cfg), cfg["n_paths"], cfg["seed"], threads,
                         float(cfg.get("z_max", 3.0)), float(cfg.get("is_var_rel_tol", 0.03)))
    n_fail = sum(1 for r in rows if r["pass"] is False)
    print(f"mc-check: {len(rows)} checks, {n_fail} failed")
    return [write_csv(out / "mc_check.csv", rows,
                      ["spec", "m", "p", "t1", "quantity", "analytic", "simulated", "se", "z", "pass"])], []


def cmd_calibrate(cfg, out, ann, threads, base_dir):
    tol = float(cfg.get("tol", calibration.DEFAULT_TOL))
    rows = []
    for i, t in enumerate(_need(cfg, "targets")):
        where = f"target {i}"
        try:
            target = calibration.CalibrationTarget(
                float(_need(t, "observed_oos_sr", where)), int(_need(t, "p_active", where)),
                int(_need(t, "t1", where)), np.atleast_2d(t.get("sigma_eps_hat", [[1.0]])),
                bool(t.get("include_intercept", True)))
        except OverfitLabError as exc:
            raise JobError(where, exc) from exc
        imp = _at(where, calibration.implied_beta, target, tol)
        spec = calibration.calibration_spec(target, imp.k)
        _, rep = _at(where, analytic.sharpe_report, spec, BacktestWindow(target.t1, int(t.get("t2", 1))), ann)
        rows.append({"target": i, "observed_oos_sr": target.observed_oos_sr * ann, "k": imp.k,
                     "clipped": imp.clipped, "sr_true": rep.sr_true, "sr_eis": rep.sr_eis,
                     "sr_eoos": rep.sr_eoos, "replication_ratio": rep.replication_ratio})
    return [write_csv(out / "calibrate.csv", rows)], []


def cmd_resample(cfg, out, ann, threads, base_dir):
    path = _resolve(_need(cfg, "dataset"), base_dir).resolve()
    cfg["dataset"] = str(path)
    ds = calibration.load_dataset(path, cfg.get("return_column"), cfg.get("date_column"))
    if cfg.get("normalize", False):
        ds = calibration.kelly_normalize(ds)
    rc = dict(cfg.get("resample", {}))
    rc.setdefault("seed", cfg["seed"])
    rcfg = calibration.ResampleConfig.from_dict(rc)
    records = _at("resample", calibration.resample_study, ds, rcfg)
    files = [write_ndjson(out / "records.ndjson", records)]
    n_bins = int(cfg.get("bins", 20))
    for axis in ("p", "t1", "sr_true"):
        files.append(emit_plot_data(calibration.bin_records(records, axis, n_bins), "resample_bins",
                                    out / f"bins_{axis}.csv"))
    files.append(write_json(out / "summary.json", calibration.overall_summary(records)))
    return files, [path]


def cmd_epsilon(cfg, out, ann, threads, base_dir):
    if "grid" in cfg:
        g = cfg["grid"]
        jobs = []
        for m in g.get("m_values", [1]):
            for p in g.get("p_values", [1]):
                for t1 in g.get("t1_values", [252]):
                    beta = np.full((int(m), int(p)), float(g.get("k", 0.0)))
                    jobs.append((ModelSpec.simple(beta), BacktestWindow(int(t1), int(g.get("t2", 2)))))
    else:
        jobs = _jobs(cfg, base_dir)
    rows = []
    for i, (spec, win) in enumerate(jobs):
        est = _at(f"job {i}", simulation.estimate_epsilon, spec, win, cfg["n_paths"], cfg["seed"] + i, threads)
        rows.append({"job": i, "m": spec.m, "p": spec.p, "t1": win.t1, "p_over_t1": spec.p / win.t1,
                     **est.to_dict()})
    return [write_csv(out / "epsilon.csv", rows)], []


def cmd_kan_compare(cfg, out, ann, threads, base_dir):
    rows = _at("kan-compare", analytic.kan_comparison_curve, float(_need(cfg, "theta")), int(_need(cfg, "t")),
               cfg.get("m_values", []), cfg.get("p_ours", [1]))
    rows = [_sr_cols(r, ["theta", "sr_is", "sr_oos"], ann) for r in rows]
    return [emit_plot_data(rows, "kan_comparison", out / "kan_comparison.csv")], []


HANDLERS = {
    "analytic": cmd_analytic, "simulate": cmd_simulate, "mc-check": cmd_mc_check,
    "calibrate": cmd_calibrate, "resample": cmd_resample, "epsilon": cmd_epsilon,
    "kan-compare": cmd_kan_compare,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="overfit-lab", description=__doc__.splitlines()[0] if __doc__ else None)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON config (or a previous run's manifest.json)")
    ap.add_argument("--out", required=True, help="run directory (created; must not hold a previous run)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--paths", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--annualize", type=int, choices=(252, 12, 1), default=None)
    return ap


def resolve_config(args):
    cfg_path = Path(args.config)
    raw = _read_json(cfg_path)
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    if "command" in raw and "config" in raw and "version" in raw:   # a manifest
        if raw["command"] != args.command:
            raise ValidationError(f"manifest is for '{raw['command']}', not '{args.command}'")
        for p, digest in raw.get("inputs", {}).items():
            if Path(p).exists() and file_sha256(p) != digest:
                raise ValidationError(f"input {p} changed since the manifest was written")
        raw = raw["config"]
    cfg = dict(raw)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.paths is not None:
        cfg["n_paths"] = args.paths
    if args.annualize is not None:
        cfg["annualize"] = args.annualize
    cfg.setdefault("seed", 0)
    cfg.setdefault("n_paths", 1000)
    cfg.setdefault("annualize", 1)
    if cfg["annualize"] not in (252, 12, 1):
        raise ValidationError("annualize must be 252, 12 or 1")
    if int(cfg["n_paths"]) < 1:
        raise ValidationError("--paths must be >= 1")
    cfg["seed"] = int(cfg["seed"])
    cfg["n_paths"] = int(cfg["n_paths"])
    return cfg, cfg_path.parent


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, base_dir = resolve_config(args)
        out = Path(args.out)
        if (out / "manifest.json").exists():
            raise ValidationError(f"{out} already holds a run; outputs are write-once")
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ValidationError(f"cannot create output directory {out}: {exc}") from None
        threads = args.threads if args.threads is not None else simulation.default_threads()
        if threads < 1:
            raise ValidationError("--threads must be >= 1")
        ann = math.sqrt(cfg["annualize"])
        files, inputs = HANDLERS[args.command](cfg, out, ann, threads, base_dir)
        man = manifest(args.command, cfg, cfg["seed"], [str(p) for p in inputs], files)
        man["threads"] = threads
        write_json(out / "manifest.json", man)
    except OverfitLabError as exc:
        print(f"overfit-lab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, TypeError) as exc:
        print(f"overfit-lab: error: bad config ({exc})", file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"overfit-lab: error: numerical failure ({exc})", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
