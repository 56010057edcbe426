#!/usr/bin/env python3
"""Sweep the memory strength of a preset and tabulate regime + constants.

Usage: python3 scripts/phase_sweep.py [preset] [p_lo] [p_hi] [steps]
Writes phase_sweep.csv in the working directory.
"""

import csv
import sys

import numpy as np

from erwlab import build_preset, classify, validate_model


def main():
    preset = sys.argv[1] if len(sys.argv) > 1 else "erw"
    p_lo = float(sys.argv[2]) if len(sys.argv) > 2 else 0.55
    p_hi = float(sys.argv[3]) if len(sys.argv) > 3 else 0.95
    steps = int(sys.argv[4]) if len(sys.argv) > 4 else 17

    rows = []
    for p in np.linspace(p_lo, p_hi, steps):
        model = validate_model(build_preset(preset, p=float(p)))
        rep = classify(model)
        clt = None if rep.clt_variance is None else float(rep.clt_variance[0, 0])
        rows.append([
            round(float(p), 6), rep.regime, rep.tau, rep.kappa,
            float(rep.limit[0]), clt, rep.lil_constant, rep.m0,
        ])
        print(f"p={p:.4f}  {rep.regime:<13} tau={rep.tau:+.4f}  clt_var={clt}")

    with open("phase_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "regime", "tau", "kappa", "limit", "clt_variance", "lil_constant", "m0"])
        writer.writerows(rows)
    print("wrote phase_sweep.csv")


if __name__ == "__main__":
    main()
