"""Command-line entry point.

Subcommands:

* ``run <config>``    - single-step-size experiment (config carries ``eta``).
* ``grid <config>``   - step-size grid search (config carries ``eta_grid``).
* ``check``           - finite-difference and moment self-tests.
* ``preset <name>``   - emit a ready-to-run config (funnel10|funnel50|funnel100|
                        gauss|logistic|bnn).
* ``bench``           - compare the compiled and pure-Python chain loops.

Exit codes: 0 success, 1 config error, 2 runtime failure (all runs failed or
self-check failure), 3 partial failure. ``RUN_THREADS`` overrides
``--threads``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from fmala import _backend
from fmala.harness import ConfigError, emit_report, parse_config, run_experiment

PRESETS = {
    # Funnel grid-search protocols: 5 chains x 10,000 samples, 10 seeds,
    # 100-point log grid (0.1-2.0 at 10/50 dimensions, 0.01-2.0 at 100).
    "funnel10": {
        "target": "funnel10",
        "sampler": "pc-line-fmala",
        "eta_grid": {"count": 100, "min": 0.1, "max": 2.0, "log": True},
        "chains": 5,
        "samples": 10_000,
        "seeds": list(range(10)),
    },
    "funnel50": {
        "target": "funnel50",
        "sampler": "pc-line-fmala",
        "eta_grid": {"count": 100, "min": 0.1, "max": 2.0, "log": True},
        "chains": 5,
        "samples": 10_000,
        "seeds": list(range(10)),
    },
    "funnel100": {
        "target": "funnel100",
        "sampler": "pc-line-fmala",
        "eta_grid": {"count": 100, "min": 0.01, "max": 2.0, "log": True},
        "chains": 5,
        "samples": 10_000,
        "seeds": list(range(10)),
    },
    "gauss": {
        "target": {"name": "gaussian", "d": 10},
        "sampler": "fmala",
        "eta_grid": {"count": 20, "min": 0.1, "max": 2.0, "log": True},
        "chains": 4,
        "samples": 5_000,
        "seeds": [0, 1, 2],
    },
    "logistic": {
        "target": {"name": "logistic", "n": 500, "d_in": 20, "n_classes": 3, "seed": 0},
        "sampler": "pc-line-fmala",
        "eta": 0.05,
        "chains": 2,
        "samples": 4_000,
        "burn_in": 1_000,
        "thinning": 3,
        "seeds": [0],
    },
    "bnn": {
        "target": {"name": "bnn", "n": 64, "seed": 0},
        "sampler": "pc-line-fmala",
        "eta": 0.002,
        "chains": 2,
        "samples": 20_000,
        "burn_in": 5_000,
        "thinning": 10,
        "seeds": [0],
    },
}


def _add_common_flags(parser):
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seeds", help="comma-separated seed list (overrides config)")
    parser.add_argument("--threads", type=int, help="worker pool size (RUN_THREADS wins)")
    parser.add_argument(
        "--dump-samples", action="store_true", help="write per-chain sample CSVs"
    )


def _build_parser():
    parser = argparse.ArgumentParser(prog="fmala", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a single-step-size experiment")
    run_p.add_argument("config", help="JSON config path")
    _add_common_flags(run_p)

    grid_p = sub.add_parser("grid", help="run a step-size grid search")
    grid_p.add_argument("config", help="JSON config path")
    _add_common_flags(grid_p)

    check_p = sub.add_parser("check", help="run the self-tests")
    check_p.set_defaults(command="check")

    preset_p = sub.add_parser("preset", help="emit a ready-made config")
    preset_p.add_argument("name", choices=sorted(PRESETS))
    preset_p.add_argument("--sampler", help="override the preset's sampler")
    preset_p.add_argument("--out", help="write to a file instead of stdout")

    bench_p = sub.add_parser("bench", help="compare compiled and python chain loops")
    bench_p.add_argument("--steps", type=int, default=20_000, help="steps per timing run")

    return parser


def _apply_overrides(cfg, args):
    updates = {}
    if args.out:
        updates["out"] = args.out
    if args.seeds:
        try:
            updates["seeds"] = tuple(int(s) for s in args.seeds.split(","))
        except ValueError:
            raise ConfigError("seeds", f"bad --seeds value {args.seeds!r}") from None
    if args.dump_samples:
        updates["dump_samples"] = True
    threads = os.environ.get("RUN_THREADS")
    if threads is not None:
        updates["threads"] = int(threads)
    elif args.threads is not None:
        updates["threads"] = args.threads
    if updates:
        from dataclasses import replace

        cfg = replace(cfg, **updates)
    return cfg


def _cmd_run(args, need_grid: bool) -> int:
    try:
        cfg = parse_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if need_grid and cfg.eta_grid is None:
            raise ConfigError("eta_grid", "the grid subcommand needs an eta_grid")
        if not need_grid and cfg.eta is None:
            raise ConfigError("eta", "the run subcommand needs a single eta")
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    result = run_experiment(cfg)
    out_dir = cfg.out or "results"
    paths = emit_report(result, out_dir, cfg=cfg)
    total = len(result.cells)
    failed = result.n_failed
    print(f"{total - failed}/{total} runs ok; wrote {paths['summary']}")
    if result.best is not None:
        metric = result.best["metric"]
        print(
            f"best eta = {result.best['eta']:.6g} "
            f"({metric} = {result.best['mean']:.6g} +- {result.best['std']:.2g})"
        )
    if failed == total:
        return 2
    if failed:
        return 3
    return 0


def _cmd_check() -> int:
    from fmala.harness import run_self_checks

    checks = run_self_checks()
    worst = 0
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        if not ok:
            worst = 2
    return worst


def _cmd_preset(args) -> int:
    preset = dict(PRESETS[args.name])
    if args.sampler:
        preset["sampler"] = args.sampler
    text = json.dumps(preset, indent=1, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    from fmala.samplers import SamplerConfig, run_chain
    from fmala.targets import funnel

    if not _backend.compiled_available():
        print("compiled backend not built; nothing to compare")
        return 2
    target = funnel(10)
    n = args.steps
    print(f"funnel 10D, pc-line-fmala and mala, {n} steps per run\n")
    print(f"{'algorithm':16s} {'backend':9s} {'steps/s':>12s}")
    agreement = True
    for alg in ("pc-line-fmala", "fmala", "mala"):
        cfg = SamplerConfig(algorithm=alg, eta=0.4, n_steps=n)
        rates = {}
        samples = {}
        for backend in ("compiled", "python"):
            start = time.perf_counter()
            report = run_chain(target, cfg, seed=0, chain_index=0, force_backend=backend)
            elapsed = time.perf_counter() - start
            rates[backend] = n / elapsed
            samples[backend] = report.chains[0].samples
            print(f"{alg:16s} {backend:9s} {rates[backend]:12,.0f}")
        close = np.allclose(samples["compiled"], samples["python"], rtol=1e-7, atol=1e-9)
        agreement = agreement and close
        print(f"{'':16s} speedup {rates['compiled'] / rates['python']:8.1f}x  "
              f"trajectories match: {close}")
    print(f"\nbackends agree on identical streams: {agreement}")
    return 0 if agreement else 2


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args, need_grid=False)
    if args.command == "grid":
        return _cmd_run(args, need_grid=True)
    if args.command == "check":
        return _cmd_check()
    if args.command == "preset":
        return _cmd_preset(args)
    if args.command == "bench":
        return _cmd_bench(args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
