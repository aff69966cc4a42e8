"""Spectra of the IVR branch currents and of every probe, for each power mode.

Writes ``<out>/<mode>_<signal>_spectrum.csv`` for the inductor current and
the clean probe output of one trace, which is enough to see the 125 MHz
switching line, its harmonics and the ~2 MHz randomizer repetition.

    python scripts/probe_spectra.py --out results/spectra
"""
import argparse
import os

from ivrsca import ivr, report, scenario


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/spectra")
    ap.add_argument("--samples", type=int, default=240_000,
                    help="constant-load record length (240000 puts the 2.08 MHz line on a bin)")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    icfg = scenario.IvrConfig()
    stage, ctrl = icfg.stage(), icfg.controller()
    fs = 5e9
    for mode, enabled in (("B-IVR", False), ("R-IVR", True)):
        rs = icfg.randomizer(enabled)
        ss = ivr.settle(stage, ctrl, rs, 10e-3, enabled)
        rec = ivr.run_constant(stage, ctrl, rs, 10e-3, args.samples, fs, enabled, ss)
        report.spectrum_table(rec["i_l"][0], fs, os.path.join(args.out, f"{mode}_inductor_spectrum.csv"))
        report.spectrum_table(rec["i_in"][0], fs, os.path.join(args.out, f"{mode}_input_spectrum.csv"))
        for probe in scenario.PROBES:
            cfg = scenario.ScenarioConfig(mode=mode, probe=probe, n_traces=1)
            ts = scenario.simulate_clean(cfg)
            stem = f"{mode}_{probe.replace('@', '-').replace(',', '')}"
            report.spectrum_table(ts.traces[0], fs, os.path.join(args.out, f"{stem}_spectrum.csv"))
            report.spectrogram_table(ts.traces[0], fs, os.path.join(args.out, f"{stem}_spectrogram.csv"),
                                     fft_len=256, hop=64)
        print(f"{mode}: wrote spectra to {args.out}")


if __name__ == "__main__":
    main()
