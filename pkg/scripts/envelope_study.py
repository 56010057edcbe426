#!/usr/bin/env python3
"""Iterated-logarithm envelope study: running maxima of the normalized
deviation against the predicted constant.

Usage: python3 scripts/envelope_study.py [p] [n_max] [N]
"""

import sys

import numpy as np

from erwlab import build_preset, classify, ensemble, validate_model
from erwlab.simulate import FunctionalConfig
from erwlab.verify import lil_envelope_test


def main():
    p = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
    n_max = int(sys.argv[2]) if len(sys.argv) > 2 else 100_000
    N = int(sys.argv[3]) if len(sys.argv) > 3 else 2000

    model = validate_model(build_preset("erw", p=p, q=0.5))
    report = classify(model)
    mode = "critical" if report.regime == "Critical" else "diffusive"
    if report.regime == "Supercritical":
        raise SystemExit("supercritical regime has no iterated-logarithm envelope")
    cfg = FunctionalConfig(
        center=np.asarray(report.limit, dtype=float), lil_mode=mode, lil_window=(1000, None)
    )
    stats = ensemble(model, n_max, N, master_seed=42, functional_config=cfg)
    check = lil_envelope_test(stats, report)
    ratios = stats.lil_max / report.lil_constant

    print(f"regime {report.regime}, constant {report.lil_constant:.4f}")
    print(f"fraction inside [0.3, 1.8]: {float(check.statistic):.4f} (pass: {check.passed})")
    edges = np.linspace(0.0, 2.5, 26)
    hist, _ = np.histogram(ratios, bins=edges)
    for lo, hi, count in zip(edges, edges[1:], hist):
        bar = "#" * int(60 * count / max(1, hist.max()))
        print(f"  [{lo:4.2f},{hi:4.2f}) {count:5d} {bar}")


if __name__ == "__main__":
    main()
