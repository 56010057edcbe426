"""Command-line interface: simulate, analyze, oracle, verify, sa, presets.

Outputs are deterministic for a fixed config and seed: reports carry a
sha256 hash of the resolved configuration, and wall-clock metadata is
segregated into a ``*_runmeta.json`` sidecar so the main artifacts stay
byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import oracle as oracle_mod
from . import sa as sa_mod
from . import verify as verify_mod
from .model import ModelError, load_model, save_model, spec_to_dict, validate_model
from .presets import build_preset, list_presets
from .simulate import FunctionalConfig, ensemble, stats_to_rows
from .theory import classify

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def _write_json(path: Path, doc: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_sidecars(out_path: Path, resolved: dict, spec):
    stem = out_path.with_suffix("")
    meta = {"wall_time_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    _write_json(Path(f"{stem}_runmeta.json"), meta)
    save_model(spec, Path(f"{stem}_model.json"))


def _resolve_model(args):
    params = {}
    for name in ("p", "q", "a", "b", "k", "f", "init", "phi", "U", "L"):
        value = getattr(args, name, None)
        if value is not None:
            params[name] = value
    if getattr(args, "coeffs", None):
        params["coeffs"] = [float(v) for v in args.coeffs.split(",")]
    if getattr(args, "z_values", None):
        params["z_values"] = [float(v) for v in args.z_values.split(",")]
    if getattr(args, "z_probs", None):
        params["z_probs"] = [float(v) for v in args.z_probs.split(",")]
    if args.model:
        path = Path(args.model)
        if not path.exists():
            raise ConfigError(f"config-invalid: model file {path} does not exist")
        spec = load_model(path)
        source = {"model_file": str(path)}
    elif args.preset:
        try:
            spec = build_preset(args.preset, **params)
        except ModelError as exc:
            raise ConfigError(f"config-invalid: {exc}") from exc
        source = {"preset": args.preset, "params": params}
    else:
        raise ConfigError("config-invalid: provide --model or --preset")
    try:
        model = validate_model(spec)
    except ModelError as exc:
        raise ConfigError(f"config-invalid: {exc}") from exc
    return model, spec, source


def _add_model_args(parser):
    parser.add_argument("--model", help="model JSON file")
    parser.add_argument("--preset", help="preset name (see `erw-lab presets`)")
    parser.add_argument("--p", type=float, default=None)
    parser.add_argument("--q", type=float, default=None)
    parser.add_argument("--a", type=float, default=None)
    parser.add_argument("--b", type=float, default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--f", type=str, default=None)
    parser.add_argument("--init", type=float, default=None)
    parser.add_argument("--phi", type=str, default=None)
    parser.add_argument("--U", type=float, default=None)
    parser.add_argument("--L", type=float, default=None)
    parser.add_argument("--coeffs", type=str, default=None, help="comma list for poly-g")
    parser.add_argument("--z-values", dest="z_values", type=str, default=None)
    parser.add_argument("--z-probs", dest="z_probs", type=str, default=None)


def _load_tol_overrides(args) -> dict:
    if not getattr(args, "tol_overrides", None):
        return {}
    path = Path(args.tol_overrides)
    if not path.exists():
        raise ConfigError(f"config-invalid: tolerance override file {path} does not exist")
    with open(path) as fh:
        return json.load(fh)


def cmd_simulate(args) -> int:
    model, spec, source = _resolve_model(args)
    out_path = Path(args.out or "stats.csv")
    stats = ensemble(model, args.n, args.N, args.seed, threads=args.threads)
    resolved = {
        "command": "simulate",
        "source": source,
        "model": spec_to_dict(spec),
        "n": args.n,
        "N": args.N,
        "seed": args.seed,
        "checkpoints": stats.checkpoints,
    }
    digest = _config_hash(resolved)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["checkpoint", "component", "mean", "se", "var"] + [f"cov_{k}" for k in range(model.d)]
        )
        for row in stats_to_rows(stats):
            writer.writerow(row)
    _write_json(out_path.with_suffix(".json"), {"config_hash": digest, "config": resolved})
    _write_sidecars(out_path, resolved, spec)
    print(f"wrote {out_path} ({args.N} trajectories to n={args.n}); config {digest[:12]}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    model, spec, source = _resolve_model(args)
    report = classify(model)
    out_path = Path(args.out or "report.json")
    resolved = {"command": "analyze", "source": source, "model": spec_to_dict(spec)}
    digest = _config_hash(resolved)
    doc = {"config_hash": digest, "regime_report": report.to_dict()}
    _write_json(out_path, doc)
    _write_sidecars(out_path, resolved, spec)
    print(f"regime: {report.regime} (tau={report.tau:.6g}, kappa={report.kappa}); wrote {out_path}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    model, spec, source = _resolve_model(args)
    out_path = Path(args.out or "law.csv")
    resolved = {"command": "oracle", "source": source, "model": spec_to_dict(spec), "n": args.n}
    digest = _config_hash(resolved)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        if model.s == 1 and model.spec.step_law.atoms.shape == (1, 1) and model.spec.step_law.atoms[0, 0] == 1.0:
            law = oracle_mod.exact_dp_1d(model, args.n)
            rows = [(k, float(p), float(law.A * k + law.n * law.b)) for k, p in enumerate(law.pmf)]
            header = ["k", "probability", "observed_value"]
        else:
            sparse = oracle_mod.enumerate_small_multi(model, args.n)
            rows = [list(pos) + [prob] for pos, prob in sorted(sparse.items())]
            header = [f"x{j + 1}" for j in range(model.s)] + ["probability"]
    except ModelError as exc:
        print(f"config-invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    _write_json(out_path.with_suffix(".json"), {"config_hash": digest, "config": resolved})
    _write_sidecars(out_path, resolved, spec)
    print(f"wrote exact law at n={args.n} to {out_path}; config {digest[:12]}")
    return EXIT_OK


def _run_suites(model, report, args, overrides) -> list:
    suites = [args.suite] if args.suite != "all" else [
        "slln", "clt", "lil", "super", "expansion", "recurrence",
    ]
    regime = report.regime
    d = model.d
    lattice = d == 1 and np.allclose(model.spec.A, np.round(model.spec.A)) and np.allclose(
        model.spec.b, np.round(model.spec.b)
    )
    wants_lil = "lil" in suites and regime in ("Diffusive", "Critical") and model.s == 1
    wants_rec = "recurrence" in suites and lattice
    cfg = FunctionalConfig(
        center=np.asarray(report.limit, dtype=float),
        lil_mode=("diffusive" if regime == "Diffusive" else "critical") if wants_lil else None,
        lil_window=(max(1000, args.n // 100), None),
        track_returns=wants_rec,
    )
    stats = ensemble(model, args.n, args.N, args.seed, threads=args.threads, functional_config=cfg)
    reports = []
    skipped = []
    for suite in suites:
        try:
            if suite == "slln":
                reports.append(
                    verify_mod.slln_test(
                        stats, report.limit, z=overrides.get("slln_z", 3.0), clt_cov=report.clt_variance
                    )
                )
            elif suite == "clt":
                if regime not in ("Diffusive", "Critical"):
                    skipped.append((suite, f"not applicable in regime {regime}"))
                    continue
                reports.append(
                    verify_mod.fluctuation_test(
                        stats,
                        report,
                        alpha=overrides.get("ks_alpha", 0.01),
                        rel_tol=overrides.get("clt_rel_tol"),
                    )
                )
            elif suite == "lil":
                if not wants_lil:
                    skipped.append((suite, f"not applicable (regime {regime}, s={model.s})"))
                    continue
                band = tuple(overrides.get("lil_band", (0.3, 1.8)))
                reports.append(verify_mod.lil_envelope_test(stats, report, band=band))
            elif suite == "super":
                if regime != "Supercritical":
                    skipped.append((suite, f"not applicable in regime {regime}"))
                    continue
                reports.append(
                    verify_mod.supercritical_limit_test(
                        stats, report, threshold=overrides.get("super_threshold", 0.15)
                    )
                )
            elif suite == "expansion":
                if regime != "Supercritical" or model.s != 1:
                    skipped.append((suite, f"not applicable in regime {regime}"))
                    continue
                reports.append(
                    verify_mod.expansion_residual_test(
                        stats, report, tolerance=overrides.get("expansion_tolerance", 0.15)
                    )
                )
            elif suite == "recurrence":
                if not wants_rec:
                    skipped.append((suite, "not applicable: needs a d=1 integer-lattice model"))
                    continue
                reports.append(verify_mod.recurrence_report(stats, report))
        except verify_mod.VerifyError as exc:
            skipped.append((suite, str(exc)))
    return reports, skipped


def cmd_verify(args) -> int:
    model, spec, source = _resolve_model(args)
    overrides = _load_tol_overrides(args)
    report = classify(model)
    reports, skipped = _run_suites(model, report, args, overrides)
    out_path = Path(args.out or "verdicts.json")
    resolved = {
        "command": "verify",
        "source": source,
        "model": spec_to_dict(spec),
        "suite": args.suite,
        "n": args.n,
        "N": args.N,
        "seed": args.seed,
        "tol_overrides": overrides,
    }
    digest = _config_hash(resolved)
    doc = {
        "config_hash": digest,
        "regime_report": report.to_dict(),
        "checks": [r.to_dict() for r in reports],
        "skipped": [{"suite": s, "reason": why} for s, why in skipped],
    }
    _write_json(out_path, doc)
    _write_sidecars(out_path, resolved, spec)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.theorem}: statistic={r.statistic} predicted={r.predicted}")
    for s, why in skipped:
        print(f"SKIP {s}: {why}")
    if not reports:
        print("config-invalid: no applicable checks for the requested suite", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


def cmd_sa(args) -> int:
    overrides = _load_tol_overrides(args)
    out_path = Path(args.out or "sa_verdicts.json")
    checks = []
    resolved = {"command": "sa", "seed": args.seed, "n": args.n, "N": args.N}
    if args.model or args.preset:
        model, spec, source = _resolve_model(args)
        resolved["source"] = source
        proc = sa_mod.gerw_to_sa(model)
        noise = sa_mod.noise_moment_check(model, n_max=min(args.n, 4000), N=min(args.N, 500), master_seed=args.seed)
        checks.append(
            {
                "name": noise.name,
                "passed": noise.passed,
                "details": noise.details,
            }
        )
    elif args.drift:
        from .funcdsl import parse

        try:
            noise = sa_mod.NoiseSpec.parse(args.noise)
            proc = sa_mod.SAProcess(
                drift=parse(args.drift, 1),
                theta0=args.theta0,
                noise=noise,
                theta1=args.theta1,
            )
        except (ModelError, ValueError) as exc:
            print(f"config-invalid: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        resolved.update({"drift": args.drift, "theta0": args.theta0, "noise": args.noise})
        paths = sa_mod.run_sa(proc, args.n, N=args.N, master_seed=args.seed)
        psi_p = proc.psi_prime()
        if psi_p > 0.5:
            j = paths.checkpoints.index(args.n)
            kept = ~paths.escaped
            var = float(np.var(np.sqrt(args.n) * (paths.theta[kept, j] - proc.theta0), ddof=1))
            predicted = proc.noise.s2 / (2.0 * psi_p - 1.0)
            tol = overrides.get("sa_var_tol", 0.05)
            checks.append(
                {
                    "name": "sa-clt-variance",
                    "passed": bool(abs(var - predicted) <= tol * predicted),
                    "details": {"statistic": var, "predicted": predicted, "tolerance": tol},
                }
            )
        else:
            rep = sa_mod.sa_expansion_check(
                proc, paths, tolerance=overrides.get("expansion_tolerance", 0.15)
            )
            checks.append({"name": rep.name, "passed": rep.passed, "details": rep.details})
    else:
        print("config-invalid: provide --drift or --model/--preset", file=sys.stderr)
        return EXIT_CONFIG
    digest = _config_hash(resolved)
    _write_json(out_path, {"config_hash": digest, "checks": checks})
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK_FAILED


def cmd_presets(args) -> int:
    rows = list_presets()
    width = max(len(r[0]) for r in rows)
    pwidth = max(len(r[1]) for r in rows)
    for name, params, note in rows:
        print(f"{name:<{width}}  {params:<{pwidth}}  {note}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erw-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--seed", type=int, default=42, help="master seed (no wall-clock seeding)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--tol-overrides", dest="tol_overrides", type=str, default=None)
        if model:
            _add_model_args(p)

    p_sim = sub.add_parser("simulate", help="run a seeded ensemble and write checkpoint statistics")
    common(p_sim)
    p_sim.add_argument("--n", type=int, default=10000)
    p_sim.add_argument("--N", type=int, default=1000)
    p_sim.set_defaults(func=cmd_simulate)

    p_an = sub.add_parser("analyze", help="compute the full analytic regime report")
    common(p_an)
    p_an.set_defaults(func=cmd_analyze)

    p_or = sub.add_parser("oracle", help="exact small-horizon law")
    common(p_or)
    p_or.add_argument("--n", type=int, default=12)
    p_or.set_defaults(func=cmd_oracle)

    p_ver = sub.add_parser("verify", help="statistical checks of the limit theorems")
    common(p_ver)
    p_ver.add_argument("--suite", choices=["slln", "clt", "lil", "super", "expansion", "recurrence", "all"], default="all")
    p_ver.add_argument("--n", type=int, default=20000)
    p_ver.add_argument("--N", type=int, default=4000)
    p_ver.set_defaults(func=cmd_verify)

    p_sa = sub.add_parser("sa", help="stochastic approximation runner and checks")
    common(p_sa)
    p_sa.add_argument("--drift", type=str, default=None, help="drift expression in x, e.g. '0.3*x + x^2'")
    p_sa.add_argument("--theta0", type=float, default=0.0)
    p_sa.add_argument("--theta1", type=float, default=0.0)
    p_sa.add_argument("--noise", type=str, default="gaussian:1.0")
    p_sa.add_argument("--n", type=int, default=100000)
    p_sa.add_argument("--N", type=int, default=2000)
    p_sa.set_defaults(func=cmd_sa)

    p_pre = sub.add_parser("presets", help="list registered presets")
    p_pre.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"config-invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
