"""Command-line entry point: ``contactregen COMMAND [options]``.

Each command writes its CSV/JSON data files and a ``manifest.json`` into a
fresh run directory ``<out>/<command>-<seed>-<digest8>``.  Data files carry
no timestamps, so a rerun from the manifest reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .config import (COMMANDS, config_digest, default_table, load_source,
                     parse_config)
from .errors import ConfigError, InsufficientDataError, UsageError

_ROW_COLS = ["trials", "successes", "p_hat", "ci_low", "ci_high", "excluded"]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else _cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _rate_csv(label_cols, rows) -> str:
    return _csv(label_cols + _ROW_COLS,
                ([r[c] for c in label_cols + _ROW_COLS] for r in rows))


class RunResult:
    def __init__(self):
        self.files: dict[str, str] = {}
        self.summary: dict = {}
        self.warnings: list[dict] = []
        self.doubling: dict | None = None

    def contamination(self, excluded: int, total: int, threshold: float):
        rate = excluded / total if total else 0.0
        if rate > threshold:
            self.warnings.append({"kind": "boundary_contamination",
                                  "rate": rate, "threshold": threshold})


# -- command runners --------------------------------------------------------

def _run_survival(cfg, doubling):
    res = RunResult()
    out = ex.survival_comparison(
        cfg["mus"], cfg["M"], cfg["horizon"], cfg["replicas"], cfg["seed"],
        cfg["window_margin"], cfg["level"], cfg["workers"],
        cfg["doubling_replicas"] if doubling else 0)
    res.files["survival.csv"] = _rate_csv(["mu", "mask"], out["rows"])
    res.summary = {k: out[k] for k in ("excluded", "monotone_violations",
                                       "half_line_violations", "horizon")}
    res.contamination(out["excluded"], cfg["replicas"],
                      cfg["contamination_threshold"])
    res.doubling = out.get("window_doubling")
    return res


def _run_endpoint(cfg, doubling):
    res = RunResult()
    out = ex.endpoint_experiment(
        cfg["mu"], cfg["M"], cfg["horizon"], cfg["replicas"], cfg["seed"],
        cfg["start"], cfg["horizons"], cfg["window_margin"], cfg["level"],
        cfg["workers"], cfg["doubling_replicas"] if doubling else 0)
    res.files["endpoint.csv"] = _rate_csv(["mask", "horizon"], out["rows"])
    res.summary = {"start": out["start"], "bootstrap": out.get("bootstrap")}
    res.contamination(max(r["excluded"] for r in out["rows"]),
                      cfg["replicas"], cfg["contamination_threshold"])
    res.doubling = out.get("window_doubling")
    return res


def _run_agreement(cfg, doubling):
    res = RunResult()
    out = ex.agreement_experiment(
        cfg["mu"], cfg["M"], cfg["horizon"], cfg["replicas"], cfg["seed"],
        cfg["set_size"], cfg["from_times"], cfg["window_margin"],
        cfg["level"], cfg["workers"])
    res.files["agreement.csv"] = _rate_csv(["from_time"], out["rows"])
    res.summary = {"set_size": out["set_size"]}
    res.contamination(out["rows"][0]["excluded"], cfg["replicas"],
                      cfg["contamination_threshold"])
    return res


def _run_shape(cfg, doubling):
    res = RunResult()
    out = ex.shape_experiment(
        cfg["mu"], cfg["M"], cfg["horizon"], cfg["replicas"], cfg["seed"],
        cfg["speed"], cfg["t0"], cfg["set_size"], cfg["window_margin"],
        cfg["level"], cfg["workers"])
    res.files["shape.csv"] = _rate_csv(["speed", "t0"], out["rows"])
    res.summary = {"survivors": out["survivors"]}
    res.contamination(out["rows"][0]["excluded"], cfg["replicas"],
                      cfg["contamination_threshold"])
    return res


def _run_breakpoints(cfg, doubling):
    res = RunResult()
    series = ex.psi_runs(cfg["mu"], cfg["M"], cfg["horizon"], cfg["seed"],
                         cfg["replicas"], cfg["min_pairs"],
                         cfg["window_margin"], cfg["verification_margin"])
    psi_rows, inc_rows = [], []
    for i, s in enumerate(series):
        for k, ((psi, r), c) in enumerate(zip(s.points, s.flags)):
            psi_rows.append((i, k, psi, r, c))
        unc = s.uncensored
        for k, (a, b) in enumerate(zip(unc, unc[1:]), start=1):
            inc_rows.append((i, k, b[1] - a[1], b[0] - a[0]))
    res.files["psi.csv"] = _csv(["replica", "k", "psi", "r_psi", "censored"],
                                psi_rows)
    res.files["increments.csv"] = _csv(["replica", "k", "dr", "dpsi"],
                                       inc_rows)
    summary = ex.increment_summary(series, cfg["test_level"])
    sample = ex.contact_sample(cfg["mu"], cfg["M"], cfg["horizon"],
                               cfg["cse_replicas"], cfg["seed"],
                               cfg["window_margin"], cfg["workers"])
    rows = ex.cse_profile(sample, cfg["horizons"], cfg["level"])
    res.files["cse.csv"] = _rate_csv(["horizon"], rows)
    summary["cse_excluded"] = rows[0]["excluded"]
    res.summary = summary
    res.contamination(rows[0]["excluded"], cfg["cse_replicas"],
                      cfg["contamination_threshold"])
    if doubling:
        n = min(cfg["doubling_replicas"], cfg["cse_replicas"])
        dbl = ex.contact_sample(cfg["mu"], cfg["M"], cfg["horizon"], n,
                                cfg["seed"], cfg["window_margin"],
                                cfg["workers"], doubled=True)
        T = cfg["horizons"][-1]
        res.doubling = ex.doubling_verdict(
            [ex._holds(s.cse_violation, T) for s in sample[:n]],
            [ex._holds(s.cse_violation, T) for s in dbl], cfg["level"])
    return res


def _contact_rows(sample):
    return _csv(["replica", "survived", "contaminated", "r_T", "N", "sigma_N",
                 "final_position", "restart_censored", "cse_violation"],
                ((s.index, s.survived, s.contaminated, s.r_T, s.N, s.sigma_N,
                  s.final_position, s.restart_censored, s.cse_violation)
                 for s in sample))


def _run_restart(cfg, doubling):
    res = RunResult()
    sample = ex.contact_sample(cfg["mu"], cfg["M"], cfg["horizon"],
                               cfg["replicas"], cfg["seed"],
                               cfg["window_margin"], cfg["workers"])
    res.files["restart.csv"] = _contact_rows(sample)
    res.summary = ex.restart_summary(sample, cfg["test_level"])
    return res


def _run_clt(cfg, doubling):
    res = RunResult()
    sample = ex.contact_sample(cfg["mu"], cfg["M"], cfg["horizon"],
                               cfg["replicas"], cfg["seed"],
                               cfg["window_margin"], cfg["workers"])
    res.files["clt.csv"] = _contact_rows(sample)
    summary = ex.clt_summary(sample, cfg["horizon"], cfg["test_level"])
    summary.pop("standardized")
    res.summary = summary
    excluded = sum(s.contaminated for s in sample)
    res.contamination(excluded, len(sample), cfg["contamination_threshold"])
    return res


def _perc_rows(sample, ns, extra=()):
    header = ["replica", "n", "alive", "size", "L_n", "R_n", "tau_proxy",
              "count_Y", "size_Y", "tail", "slow"] + [e[0] for e in extra]
    rows = []
    for i, r in enumerate(sample):
        for n in ns:
            row = r["rows"][n]
            rows.append([i, n, row["alive"], row["size"], row["L"], row["R"],
                         "inf" if r["tau"] is None else r["tau"],
                         row["count_Y"], row["size_Y"], row["tail"],
                         row["slow"]] + [f(row) for _, f in extra])
    return _csv(header, rows)


def _run_percolation(cfg, doubling):
    res = RunResult()
    out = ex.percolation_experiment(
        cfg["epsilon"], cfg["mode"], cfg["n_max"], cfg["ns"], cfg["replicas"],
        cfg["seed"], cfg["beta"], cfg["level"], cfg["workers"])
    res.files["runs.csv"] = _perc_rows(out["sample"], cfg["ns"])
    res.files["tail.csv"] = _rate_csv(["n"], out["tail_rows"])
    res.files["slow.csv"] = _rate_csv(["n"], out["slow_rows"])
    res.files["tail_fit.json"] = _json(out["tail_fit"])
    res.summary = {k: out[k] for k in ("surviving", "identity_violations",
                                       "n_max", "proxy")}
    return res


def _run_deficit(cfg, doubling):
    res = RunResult()
    out = ex.deficit_decay_experiment(
        cfg["epsilon"], cfg["mode"], cfg["n_max"], cfg["ns"], cfg["replicas"],
        cfg["seed"], cfg["rho"], cfg["pilot_replicas"], cfg["pilot_n"],
        cfg["y_fraction"], cfg["level"], cfg["workers"])
    rho = out["rho"]
    res.files["runs.csv"] = _perc_rows(
        out["sample"], cfg["ns"], [("deficit", lambda r: ex._deficit(r, rho))])
    res.files["deficit.csv"] = _rate_csv(["n"], out["rows"])
    res.files["fit.json"] = _json(out["fit"])
    res.summary = {"rho": rho, "pilot": out["pilot"]}
    if out["pilot"] and not out["pilot"]["in_target"]:
        res.warnings.append({"kind": "pilot_outside_target",
                             "pilot": out["pilot"]})
    return res


def _run_scan(cfg, doubling):
    res = RunResult()
    out = ex.scan_runs_experiment(
        cfg["epsilon"], cfg["mode"], cfg["n_max"], cfg["ns"], cfg["replicas"],
        cfg["seed"], cfg["b"], cfg["beta"], cfg["rho"], cfg["level"],
        cfg["workers"])
    res.files["runs.csv"] = _perc_rows(out["sample"], cfg["ns"],
                                       [("scan", lambda r: r["scan"])])
    res.files["scan.csv"] = _rate_csv(["n"], out["rows"])
    res.files["fit.json"] = _json(out["fit"])
    return res


RUNNERS = {
    "survival": _run_survival,
    "endpoint-equality": _run_endpoint,
    "agreement": _run_agreement,
    "shape": _run_shape,
    "breakpoints": _run_breakpoints,
    "restart": _run_restart,
    "clt": _run_clt,
    "percolation": _run_percolation,
    "deficit-decay": _run_deficit,
    "scan-runs": _run_scan,
}
DOUBLING_COMMANDS = ("survival", "endpoint-equality", "breakpoints")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _run_dir(out: Path, command: str, cfg: dict) -> Path:
    base = f"{command}-{cfg['seed']}-{config_digest(command, cfg)[:8]}"
    path = out / base
    k = 1
    while path.exists():
        path = out / f"{base}-{k}"
        k += 1
    return path


def execute(command: str, cfg: dict, out: str | Path = "runs",
            window_doubling: bool = False) -> Path:
    """Run ``command`` with a parsed config; returns the run directory."""
    if command not in RUNNERS:
        raise UsageError(f"unknown command {command!r}")
    started = _now()
    result = RUNNERS[command](cfg, window_doubling)
    result.files["summary.json"] = _json(result.summary)
    run_dir = _run_dir(Path(out), command, cfg)
    run_dir.mkdir(parents=True)
    files = []
    for name in sorted(result.files):
        data = result.files[name].encode()
        (run_dir / name).write_bytes(data)
        files.append({"path": name, "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {
        "tool_version": __version__,
        "command": command,
        "full_config": cfg,
        "master_seed": cfg["seed"],
        "replica_count": cfg["replicas"],
        "started_at": started,
        "finished_at": _now(),
        "output_files": files,
        "warnings": result.warnings,
    }
    if window_doubling:
        manifest["window_doubling"] = result.doubling or {
            "applicable": False,
            "note": f"no window-doubling check for {command}"}
    (run_dir / "manifest.json").write_text(_json(manifest))
    return run_dir


def _error(exc: Exception, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        record.update(field=exc.field, rule=exc.rule)
    sys.stderr.write(json.dumps(record) + "\n")
    return code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contactregen", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", metavar="PATH")
        c.add_argument("--seed", type=int)
        c.add_argument("--replicas", type=int)
        c.add_argument("--workers", type=int)
        c.add_argument("--out", default="runs", metavar="DIR")
        c.add_argument("--window-doubling", action="store_true")
    d = sub.add_parser("defaults", help="print the default table")
    d.add_argument("for_command", nargs="?", default="survival",
                   choices=COMMANDS)
    r = sub.add_parser("replay", help="rerun a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", default="runs", metavar="DIR")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "defaults":
            print(default_table(args.for_command))
            return 0
        if args.command == "replay":
            doc = json.loads(Path(args.manifest).read_text())
            command = doc["command"]
            cfg = parse_config(doc["full_config"], command)
            run = execute(command, cfg, args.out,
                          "window_doubling" in doc)
        else:
            source = Path(args.config).read_text() if args.config else ""
            cfg = parse_config(load_source(source), args.command,
                               {"seed": args.seed, "replicas": args.replicas,
                                "workers": args.workers})
            run = execute(args.command, cfg, args.out, args.window_doubling)
    except ConfigError as exc:
        return _error(exc, 2)
    except (UsageError, InsufficientDataError, ValueError) as exc:
        return _error(exc, 1)
    except (OSError, KeyError) as exc:
        return _error(exc, 1)
    print(run)
    return 0


if __name__ == "__main__":
    sys.exit(main())
