"""Command-line entry point.

    ivrsca simulate  --config scen.yaml --traces 5000 --out set.bsim
    ivrsca attack cema --in set.bsim --aes LP --out results/lp_cema
    ivrsca attack tvla --in tvla.bsim --out results/tvla
    ivrsca attack template --in set.bsim --out results/tpl
    ivrsca calibrate --budget 10000 --out results/calibration
    ivrsca report --in results --out results/tables
    ivrsca scenarios
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import yaml

from . import harness, report, scenario, store
from .scenario import ScenarioConfig

log = logging.getLogger("ivrsca")


def load_config(path: str | None) -> ScenarioConfig:
    if not path:
        return ScenarioConfig()
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return scenario.config_from_dict(data)


def _overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    kw = {}
    for flag, name in (("aes", "aes"), ("mode", "mode"), ("probe", "probe"), ("traces", "n_traces"),
                       ("seed", "seed"), ("noise", "noise_sigma"), ("dataset", "dataset"),
                       ("workers", "workers")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    return cfg.replace(**kw) if kw else cfg


def _common(p, traces=True):
    p.add_argument("--config", help="scenario YAML file")
    p.add_argument("--aes", choices=["HP", "LP"])
    p.add_argument("--mode", choices=["standalone", "B-IVR", "R-IVR"])
    p.add_argument("--probe", choices=list(scenario.PROBES))
    p.add_argument("--seed", type=int)
    if traces:
        p.add_argument("--traces", type=int)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ivrsca", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario into a .bsim trace store")
    _common(p)
    p.add_argument("--noise", type=float, help="measurement noise sigma (probe units)")
    p.add_argument("--dataset", choices=["random", "tvla"])
    p.add_argument("--workers", type=int)

    p = sub.add_parser("attack", help="run an attack on a stored trace set")
    asub = p.add_subparsers(dest="attack", required=True)
    for name in ("tvla", "cema", "template"):
        q = asub.add_parser(name)
        _common(q, traces=False)
        q.add_argument("--in", dest="inp", required=True, help="trace store (.bsim)")
        q.add_argument("--budget", type=int, help="use at most this many traces")

    p = sub.add_parser("calibrate", help="choose the noise sigma for the standalone LP-AES anchor")
    _common(p, traces=False)
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--holdout-seed", type=int)

    p = sub.add_parser("report", help="collect attack summaries into tables")
    p.add_argument("--in", dest="inp", required=True, help="directory searched for summary.json")
    p.add_argument("--store", action="append", default=[],
                   help="also emit the spectrum/spectrogram of the first trace of this store")
    p.add_argument("--out", required=True)

    sub.add_parser("scenarios", help="list the full scenario matrix")
    return ap


def cmd_simulate(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    path = scenario.run_scenario(cfg, args.out)
    with open(path + ".yaml", "w") as f:
        yaml.safe_dump(scenario.config_to_dict(cfg), f, sort_keys=False)
    print(path)
    return 0


def cmd_attack(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    ts = store.load(args.inp)
    if args.budget is not None:
        ts = ts.subset(slice(0, min(args.budget, ts.n_traces)))
    os.makedirs(args.out, exist_ok=True)
    summary = {"attack": args.attack, "input": args.inp, "aes": cfg.aes, "mode": ts.mode,
               "probe": ts.probe, "n_traces": ts.n_traces}
    if args.attack == "tvla":
        res = harness.run_tvla(ts, cfg)
        report.tvla_table(res, os.path.join(args.out, "tvla.csv"))
        report.tvla_vs_band(res, os.path.join(args.out, "tvla_vs_band.csv"))
        summary.update(report.tvla_summary(res))
    else:
        run = harness.run_cema if args.attack == "cema" else harness.run_template
        res = run(ts, cfg)
        report.correlation_vs_traces(res, os.path.join(args.out, "corr_vs_traces.csv"))
        summary.update(report.cema_summary(res))
    report.write_summary(os.path.join(args.out, "summary.json"), summary)
    print(json.dumps(report._jsonable(summary), sort_keys=True))
    return 0


def cmd_calibrate(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    try:
        cal = harness.calibrate_noise(cfg, budget=args.budget, holdout_seed=args.holdout_seed)
    except harness.CalibrationError as exc:
        print(exc, file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    report.write_csv(os.path.join(args.out, "sweep.csv"), ["sigma", "budget", "mtd"],
                     ((f"{s:.6g}", b, harness.attacks.format_mtd(m, b)) for s, m, b in cal.sweep))
    summary = {"sigma": cal.sigma, "mtd": cal.mtd, "holdout_seed": cal.holdout_seed,
               "holdout_mtd": cal.holdout_mtd, "holdout_ok": cal.holdout_ok}
    report.write_summary(os.path.join(args.out, "calibration.json"), summary)
    print(json.dumps(summary))
    return 0


def cmd_report(args) -> int:
    entries = []
    tvla_rows = []
    for path in sorted(glob.glob(os.path.join(args.inp, "**", "summary.json"), recursive=True)):
        with open(path) as f:
            s = json.load(f)
        name = os.path.relpath(os.path.dirname(path), args.inp)
        if s.get("attack") in ("cema", "template"):
            m = s["mtd"]
            entries.append((name, s["aes"], s["mode"], s["probe"], s["budget"],
                            None if m.startswith("not-reached") else int(m)))
        elif s.get("attack") == "tvla":
            tvla_rows.append([name, s["aes"], s["mode"], s["probe"], s["n_traces"],
                              f"{s['peak']:.6g}", int(s["leaks"])])
    os.makedirs(args.out, exist_ok=True)
    report.mtd_table(entries, os.path.join(args.out, "mtd.csv"))
    report.write_csv(os.path.join(args.out, "tvla_peaks.csv"),
                     ["scenario", "aes", "mode", "probe", "traces", "peak_abs_t", "leak"], tvla_rows)
    for sp in args.store:
        ts = store.load(sp, mmap=True)
        stem = os.path.splitext(os.path.basename(sp))[0]
        report.spectrum_table(ts.traces[0], ts.sample_rate, os.path.join(args.out, f"{stem}_spectrum.csv"))
        report.spectrogram_table(ts.traces[0], ts.sample_rate,
                                 os.path.join(args.out, f"{stem}_spectrogram.csv"),
                                 fft_len=min(256, ts.n_samples), hop=64)
    print(args.out)
    return 0


def cmd_scenarios(args) -> int:
    for c in scenario.scenario_matrix():
        print(f"{c.mode}\t{c.aes}\t{c.probe}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"simulate": cmd_simulate, "attack": cmd_attack, "calibrate": cmd_calibrate,
               "report": cmd_report, "scenarios": cmd_scenarios}[args.cmd]
    try:
        return handler(args)
    except (ValueError, OSError, store.StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
