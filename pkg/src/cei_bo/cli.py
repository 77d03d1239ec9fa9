"""Command-line entry point: ``cei-bo {run,profit,verify,list-benchmarks}``.

Exit codes: 0 success, 1 runtime failure (partial outputs are written with a
``.partial.csv`` suffix and listed in the summary), 2 invalid configuration,
3 a hard verification check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import benchmarks as bm
from ._io import atomic_write_text
from .experiment import (
    OUTPUT_ENV,
    ConfigError,
    load_config,
    profit_csv,
    profit_table,
    resolve_output_dir,
    run_all,
    write_run_outputs,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3


def parse_seeds(text: str) -> list:
    """``"1-15"``, ``"1,2,7"`` or a mix such as ``"1-3,10"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def parse_floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed_arg(text):
    try:
        return parse_seeds(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cei-bo",
        description="Bayesian optimization with corrected expected improvement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        p.add_argument("--out", default=None,
                       help=f"output directory (default: config output_dir, then ${OUTPUT_ENV}, then ./results)")
        p.add_argument("--seeds", type=_seed_arg, default=None, help="override seeds, e.g. 1-15 or 1,4,9")
        p.add_argument("--parallel", type=int, default=1, help="worker processes (default 1)")

    p_run = sub.add_parser("run", help="run every (acquisition, seed) pair and write traces")
    experiment_flags(p_run)
    p_run.add_argument("--kappa", type=float, default=None, help="override the stopping threshold")

    p_profit = sub.add_parser("profit", help="profit table over a grid of stopping thresholds")
    experiment_flags(p_profit)
    p_profit.add_argument("--kappa", type=parse_floats, default=None,
                          help="override the threshold grid, comma-separated")

    p_verify = sub.add_parser("verify", help="run the numerical self-check suite")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    p_verify.add_argument("--no-probabilistic", action="store_true",
                          help="skip the frequency checks of the probabilistic lemmas")
    p_verify.add_argument("--inject-fault", choices=["sigma_tilde"], default=None,
                          help=argparse.SUPPRESS)

    sub.add_parser("list-benchmarks", help="list available benchmark functions")
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seeds is not None:
        cfg.seeds = args.seeds
    if args.parallel < 1:
        raise ConfigError(["?: flag '--parallel': must be at least 1"], "<command line>")
    return cfg


def _report_failures(summary) -> int:
    failed = summary["failed_runs"]
    for f in failed:
        print(f"run failed: {f['acquisition']} seed {f['seed']}: {f['error']}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.kappa is not None:
        cfg.kappa = args.kappa
    problems = cfg.problems()
    if problems:
        raise ConfigError(problems, args.config)
    out_dir = resolve_output_dir(args.out, cfg)
    outcomes = run_all(cfg, args.parallel)
    summary = write_run_outputs(cfg, outcomes, out_dir)
    for name, block in summary["acquisitions"].items():
        med = block["median_final_log_gap"]
        print(f"{name:>14s}  median final log10 gap: {'n/a' if med is None else f'{med:.4f}'}")
    print(f"wrote {len(outcomes)} traces to {out_dir}")
    return _report_failures(summary)


def cmd_profit(args) -> int:
    cfg = _load(args)
    if args.kappa is not None:
        cfg.kappa_grid = args.kappa
    problems = cfg.problems()
    if not cfg.kappa_grid:
        problems.append("?: field 'kappa_grid': profit needs at least one threshold")
    if problems:
        raise ConfigError(problems, args.config)
    out_dir = resolve_output_dir(args.out, cfg)
    # one unthresholded run per pair; every grid value is read off its prefix
    outcomes = run_all(cfg, args.parallel, kappa=0.0)
    rows = profit_table(cfg, outcomes, cfg.kappa_grid)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{cfg.benchmark_function().id}_profit.csv")
    atomic_write_text(path, profit_csv(rows))
    for r in rows:
        print(f"kappa={r['kappa']:<10g} {r['acquisition']:>14s}  profit {r['mean_profit']:.4g} "
              f"(se {r['std_err']:.3g}, t {r['mean_t_kappa']:.1f})")
    print(f"wrote {path}")
    failed = [o for o in outcomes if o.error is not None]
    for o in failed:
        print(f"run failed: {o.acquisition} seed {o.seed}: {o.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_verification

    report = run_verification(args.seed, inject_fault=args.inject_fault,
                              probabilistic=not args.no_probabilistic)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    for c in report["checks"]:
        status = "ok" if c["passed"] else ("FAIL" if c["hard"] else "low")
        print(f"{status:>4s}  {c['name']:<28s} margin {c['margin']:.3g}", file=sys.stderr)
    if not report["passed"]:
        print(f"hard check failed: {', '.join(report['failed_checks'])}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_list_benchmarks(args) -> int:
    for name in bm.BENCHMARK_NAMES:
        fn = bm.get_benchmark(name)
        lo, hi = fn.bounds[0]
        print(f"{name:<10s} dim={fn.dim}  box=[{lo:g}, {hi:g}]^{fn.dim}  min={fn.optimum_value:.10g}")
    lo, hi = bm.GP_SAMPLED_DOMAIN
    print(f"{'gp_sampled':<10s} dim=1  box=[{lo:g}, {hi:g}]  min=per draw (needs gp_seed)")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "profit": cmd_profit, "verify": cmd_verify,
            "list-benchmarks": cmd_list_benchmarks}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {exc.source}:{p}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
