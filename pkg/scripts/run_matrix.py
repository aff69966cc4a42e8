"""Simulate and attack a set of scenarios, then collect the tables.

By default runs the five CEMA scenarios of the leakage-ordering experiment
(standalone LP/HP, B-IVR LP, R-IVR LP/HP) on the small loop probe, plus
fixed-versus-random TVLA sets.  ``--all`` walks the full
mode x AES x probe matrix instead (slow).

    python scripts/run_matrix.py --out results --sigma 2e-5 --cema 20000 --tvla 10000
"""
import argparse
import os
import time

from ivrsca import harness, report, scenario, store

NODE_SIGMA = 1e-6


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--sigma", type=float, default=None,
                    help="loop-probe noise sigma (default: run calibrate_noise first)")
    ap.add_argument("--node-sigma", type=float, default=NODE_SIGMA)
    ap.add_argument("--cema", type=int, default=harness.CEMA_BUDGET)
    ap.add_argument("--tvla", type=int, default=harness.TVLA_BUDGET)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--all", action="store_true")
    ap.add_argument("--keep-stores", action="store_true")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    sigma = args.sigma
    if sigma is None:
        cal = harness.calibrate_noise(scenario.ScenarioConfig(seed=args.seed))
        sigma = cal.sigma
        print(f"calibrated sigma = {sigma:.3g} (MTD {cal.mtd})")

    base = scenario.ScenarioConfig(seed=args.seed)
    if args.all:
        cases = scenario.scenario_matrix(base)
    else:
        cases = [base.replace(mode=m, aes=a) for m, a in
                 (("standalone", "LP"), ("standalone", "HP"), ("B-IVR", "LP"),
                  ("R-IVR", "LP"), ("R-IVR", "HP"))]
    mtds = []
    for c in cases:
        s = args.node_sigma if c.probe.startswith("node@") else sigma
        name = f"{c.mode}_{c.aes}_{c.probe}".replace("@", "-").replace(",", "")
        for kind, n in (("cema", args.cema), ("tvla", args.tvla)):
            cfg = c.replace(n_traces=n, noise_sigma=s, dataset="random" if kind == "cema" else "tvla")
            t0 = time.time()
            ts = scenario.simulate(cfg)
            if args.keep_stores:
                store.save(ts, os.path.join(args.out, f"{name}_{kind}.bsim"))
            d = os.path.join(args.out, f"{name}_{kind}")
            if kind == "cema":
                res = harness.run_cema(ts, cfg)
                report.correlation_vs_traces(res, os.path.join(d, "corr_vs_traces.csv"))
                mtds.append((name, c.aes, c.mode, c.probe, res.budget, res.mtd))
                msg = f"MTD {report.attacks.format_mtd(res.mtd, res.budget)}"
            else:
                res = harness.run_tvla(ts, cfg)
                report.tvla_table(res, os.path.join(d, "tvla.csv"))
                report.tvla_vs_band(res, os.path.join(d, "tvla_vs_band.csv"))
                msg = "peak |t| " + ", ".join(f"o{o}={v:.2f}" for o, v in res.peak_by_order().items())
            print(f"{name:40s} {kind:5s} {msg}  ({time.time() - t0:.0f} s)", flush=True)
    report.mtd_table(mtds, os.path.join(args.out, "mtd.csv"))


if __name__ == "__main__":
    main()
