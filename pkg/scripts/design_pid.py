"""Grid search for PID gains with the sampled-loop margin analysis.

Prints the candidates with phase margin >= 50 deg and gain margin >= 8 dB,
ordered by crossover frequency, and then closed-loop checks the shipped
default gains.

    python scripts/design_pid.py [--points 12]
"""
import argparse
import dataclasses

import numpy as np

from ivrsca import ivr


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=12, help="grid points per gain")
    ap.add_argument("--min-pm", type=float, default=50.0)
    ap.add_argument("--min-gm", type=float, default=8.0)
    args = ap.parse_args()

    stage, ctrl = ivr.PowerStageParams(), ivr.ControllerParams()
    found = []
    for kp in np.geomspace(1e-5, 1e-2, args.points):
        for ki in np.geomspace(1e-5, 1e-2, args.points):
            for kd in np.concatenate([[0.0], np.geomspace(1e-4, 1e-1, args.points)]):
                m = ivr.loop_margins(stage, dataclasses.replace(ctrl, kp=kp, ki=ki, kd=kd))
                if m.n_crossings and m.phase_margin >= args.min_pm and m.gain_margin >= args.min_gm:
                    found.append((m.crossover, kp, ki, kd, m))
    found.sort(key=lambda r: -r[0])
    print(f"{len(found)} candidates")
    for fc, kp, ki, kd, m in found[:15]:
        print(f"kp={kp:.3g} ki={ki:.3g} kd={kd:.3g}  crossover={fc / 1e6:.2f} MHz  "
              f"PM={m.phase_margin:.1f} deg  GM={m.gain_margin:.1f} dB")

    m = ivr.loop_margins(stage, ctrl)
    print(f"\ndefault gains kp={ctrl.kp} ki={ctrl.ki} kd={ctrl.kd}: PM={m.phase_margin:.1f} deg "
          f"GM={m.gain_margin:.1f} dB crossover={m.crossover / 1e6:.2f} MHz")
    rs = ivr.RandomizerState()
    for load in (0.01, 0.05, 0.2):
        ss = ivr.settle(stage, ctrl, rs, load, False)
        print(f"load {load * 1e3:5.0f} mA: mean V_OUT {ss.mean_v_out:.4f} V (LSB {ctrl.lsb * 1e3:.1f} mV)")


if __name__ == "__main__":
    main()
