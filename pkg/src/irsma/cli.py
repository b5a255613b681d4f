"""Command-line entry point: ``irsma run | oracle-check | figure``.

Exit codes: 0 success, 1 configuration error, 2 oracle failure,
3 infeasible rate target at one or more sweep points.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .checks import SUITES, run_suite
from .config import PRESETS, ConfigError, ExperimentConfig, load_config, parse_config
from .orchestrator import run_experiment

__all__ = ["main", "run_config", "CSV_COLUMNS"]

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE, EXIT_INFEASIBLE = 0, 1, 2, 3

CSV_COLUMNS = ["scheme", "adjustment", "N", "L", "Pbar_dBm", "Rbar", "avg_sum_rate", "R1_avg", "R2_avg",
               "power_residual", "rate_residual", "seed", "runtime_s"]

log = logging.getLogger("irsma")


def _fmt(x) -> str:
    return repr(float(x))


def run_config(cfg: ExperimentConfig, out: Path, timing: bool = True) -> int:
    """Run every sweep point, write the CSV and its JSON sidecar, return the exit code."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows, records, infeasible = [], [], False
    levels = cfg.levels
    for pt in cfg.points():
        res = run_experiment(cfg.geometry(pt), cfg.fading(pt), cfg.budget(pt), cfg.scheme(pt), cfg.states, pt.seed)
        infeasible |= not res.feasible
        rows.append([
            pt.access, pt.adjustment, pt.elements, "none" if levels is None else levels, _fmt(pt.avg_power_dbm),
            _fmt(pt.min_rate), _fmt(res.avg_sum_rate), _fmt(res.per_user_avg_rates[0]),
            _fmt(res.per_user_avg_rates[1]), _fmt(res.constraint_residuals["power"]),
            _fmt(res.constraint_residuals["rate"]), pt.seed, _fmt(res.runtime_s if timing else 0.0),
        ])
        records.append({
            "point": {"scheme": pt.access, "adjustment": pt.adjustment, "N": pt.elements, "L": levels,
                      "Pbar_dBm": pt.avg_power_dbm, "Rbar": pt.min_rate, "irs_x": pt.irs_x, "seed": pt.seed,
                      "states": cfg.states},
            "result": res.to_dict() | {"runtime_s": res.runtime_s if timing else 0.0},
        })
        log.info("%s/%s N=%d P=%.1f dBm: %.4f", pt.access, pt.adjustment, pt.elements, pt.avg_power_dbm,
                 res.avg_sum_rate)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)
    sidecar = out.with_suffix(".json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.values, "source": cfg.source, "results": records}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(rows)} rows to {out} and {sidecar}")
    if infeasible:
        print("rate target infeasible at one or more points (see feasible/max_min_rate in the JSON)", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irsma", description="IRS-aided two-user downlink rate experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, help="CSV output path (JSON sidecar written next to it)")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--states", type=int, metavar="F", help="override fading.states")
        sp.add_argument("--threads", type=int, help="worker processes for per-state phase design")
        sp.add_argument("--no-timing", action="store_true", help="write runtime_s as 0 for byte-identical reruns")

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("--config", type=Path, required=True)
    common(run)

    fig = sub.add_parser("figure", help="run a built-in figure preset")
    fig.add_argument("name", choices=sorted(PRESETS))
    fig.add_argument("--config", type=Path, help="extra config file applied on top of the preset")
    common(fig)

    oc = sub.add_parser("oracle-check", help="compare fast solvers against their references")
    oc.add_argument("suite", choices=sorted(SUITES) + ["all"])
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "oracle-check":
        names = sorted(SUITES) if args.suite == "all" else [args.suite]
        failed = 0
        for name in names:
            for res in run_suite(name):
                print(res.line())
                failed += not res.passed
        print(f"{'FAIL' if failed else 'PASS'}: {failed} failing check(s)")
        return EXIT_ORACLE if failed else EXIT_OK

    try:
        if args.command == "figure":
            if args.config is None:
                cfg = parse_config(PRESETS[args.name], source=f"preset:{args.name}")
            else:
                cfg = parse_config(args.config.read_text(encoding="utf-8"), source=str(args.config),
                                   base=PRESETS[args.name])
            default_out = Path(f"{args.name}.csv")
        else:
            cfg = load_config(args.config)
            default_out = None
        cfg = cfg.with_overrides(seed=args.seed, states=args.states, threads=args.threads)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or default_out or Path(cfg.get("run", "output"))
    return run_config(cfg, out, timing=not args.no_timing)


if __name__ == "__main__":
    sys.exit(main())
