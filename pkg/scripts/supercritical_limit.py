#!/usr/bin/env python3
"""Per-trajectory rescaled-deviation limits in the superdiffusive regime.

D(n) = n^(1-tau) (S_n/n - limit) settles to a random value per trajectory;
this script checks the stabilization and prints the sample quantiles of the
terminal values (the law of the limit variable is an open problem, so the
histogram is descriptive only).

Usage: python3 scripts/supercritical_limit.py [p] [n_max] [N]
"""

import sys

import numpy as np

from erwlab import build_preset, classify, ensemble, validate_model
from erwlab.verify import supercritical_limit_test


def main():
    p = float(sys.argv[1]) if len(sys.argv) > 1 else 0.85
    n_max = int(sys.argv[2]) if len(sys.argv) > 2 else 100_000
    N = int(sys.argv[3]) if len(sys.argv) > 3 else 2000

    model = validate_model(build_preset("erw", p=p, q=0.5))
    report = classify(model)
    if report.regime != "Supercritical":
        raise SystemExit(f"regime is {report.regime}; pick p > 3/4 for the classical walk")
    stats = ensemble(model, n_max, N, master_seed=42)
    check = supercritical_limit_test(stats, report)
    print(f"tau = {report.tau:.4f}, scaling exponent 1 - tau = {1 - report.tau:.4f}")
    print(f"Cauchy statistic {float(check.statistic):.4f} (threshold {check.tolerance}) pass: {check.passed}")
    print("terminal rescaled deviation quantiles (descriptive):")
    for q, v in check.details["L_estimates_quantiles"].items():
        print(f"  q{q:02d}: {v:+.4f}")


if __name__ == "__main__":
    main()
