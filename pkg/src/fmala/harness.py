"""Experiment orchestration: config parsing, grid runs and result files.

A run is a grid of (eta, seed) cells; each cell runs ``chains`` independent
chains keyed by (seed, chain index) and pools them into one summary. Output
is a schema-versioned ``summary.json``, a flat ``grid.csv`` and a
``best.json`` with the selected step size. Everything except the metadata
block is a pure function of (config, seeds).
"""

from __future__ import annotations

import datetime
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

import fmala
from fmala import _backend
from fmala.diagnostics import ChainSummary, summarize
from fmala.samplers import ALGORITHMS, BIAS_CORRECTION_MODES, RunReport, SamplerConfig, run_chain
from fmala.targets import resolve_target


class ConfigError(ValueError):
    """A config file failed validation; ``field`` names the offender."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field '{field_name}': {message}")


_KNOWN_KEYS = {
    "target",
    "sampler",
    "eta",
    "eta_grid",
    "chains",
    "samples",
    "burn_in",
    "thinning",
    "seeds",
    "out",
    "floor_eps",
    "bias_correction",
    "dump_samples",
    "threads",
}

_GRID_KEYS = {"count", "min", "max", "log"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description with defaults applied."""

    target: object  # name string or {"name": ..., params} dict
    sampler: str
    eta: Optional[float] = None
    eta_grid: Optional[dict] = None
    chains: int = 5
    samples: int = 10_000
    burn_in: int = 0
    thinning: int = 1
    seeds: tuple[int, ...] = (0,)
    out: Optional[str] = None
    floor_eps: float = 1e-8
    bias_correction: str = "paper-default"
    dump_samples: bool = False
    threads: int = 1

    def eta_values(self) -> np.ndarray:
        if self.eta is not None:
            return np.array([float(self.eta)])
        return eta_grid_points(**self.eta_grid)

    def sampler_config(self, eta: float) -> SamplerConfig:
        return SamplerConfig(
            algorithm=self.sampler,
            eta=float(eta),
            n_steps=self.samples,
            burn_in=self.burn_in,
            thinning=self.thinning,
            floor_eps=self.floor_eps,
            bias_correction=self.bias_correction,
        )


def eta_grid_points(count: int, min: float, max: float, log: bool = True) -> np.ndarray:  # noqa: A002
    """Step-size grid, evenly spread (logarithmically by default)."""
    if count < 1:
        raise ConfigError("eta_grid.count", f"must be positive, got {count}")
    if not 0 < min < max:
        raise ConfigError("eta_grid", f"need 0 < min < max, got [{min}, {max}]")
    if count == 1:
        return np.array([float(min)])
    i = np.arange(count)
    if log:
        lo, hi = math.log(min), math.log(max)
        return np.exp(lo + i / (count - 1) * (hi - lo))
    return min + i / (count - 1) * (max - min)


def _validate(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    for key in ("target", "sampler"):
        if key not in raw:
            raise ConfigError(key, "required")
    if raw["sampler"] not in ALGORITHMS:
        raise ConfigError("sampler", f"unknown sampler '{raw['sampler']}'; one of {ALGORITHMS}")

    has_eta = "eta" in raw
    has_grid = "eta_grid" in raw
    if has_eta == has_grid:
        raise ConfigError("eta", "exactly one of 'eta' or 'eta_grid' is required")
    if has_eta and not (isinstance(raw["eta"], (int, float)) and raw["eta"] > 0):
        raise ConfigError("eta", f"must be a positive number, got {raw['eta']!r}")
    if has_grid:
        grid = raw["eta_grid"]
        if not isinstance(grid, dict):
            raise ConfigError("eta_grid", "must be an object with count/min/max[/log]")
        extra = set(grid) - _GRID_KEYS
        if extra:
            raise ConfigError(f"eta_grid.{sorted(extra)[0]}", "unknown key")
        for key in ("count", "min", "max"):
            if key not in grid:
                raise ConfigError(f"eta_grid.{key}", "required")
        eta_grid_points(**grid)  # raises ConfigError on bad values

    def positive_int(key, default):
        value = raw.get(key, default)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(key, f"must be a positive integer, got {value!r}")
        return value

    chains = positive_int("chains", 5)
    samples = positive_int("samples", 10_000)
    thinning = positive_int("thinning", 1)
    burn_in = raw.get("burn_in", 0)
    if not isinstance(burn_in, int) or isinstance(burn_in, bool) or burn_in < 0:
        raise ConfigError("burn_in", f"must be a non-negative integer, got {burn_in!r}")
    if burn_in >= samples:
        raise ConfigError("burn_in", f"must be smaller than samples={samples}, got {burn_in}")

    seeds = raw.get("seeds", [0])
    if (
        not isinstance(seeds, (list, tuple))
        or not seeds
        or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds)
    ):
        raise ConfigError("seeds", f"must be a non-empty list of integers, got {seeds!r}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seeds")

    floor_eps = raw.get("floor_eps", 1e-8)
    if not isinstance(floor_eps, (int, float)) or floor_eps <= 0:
        raise ConfigError("floor_eps", f"must be positive, got {floor_eps!r}")
    bias_correction = raw.get("bias_correction", "paper-default")
    if bias_correction not in BIAS_CORRECTION_MODES:
        raise ConfigError("bias_correction", f"one of {BIAS_CORRECTION_MODES}")
    threads = positive_int("threads", 1)

    try:
        resolve_target(raw["target"])
    except ValueError as err:
        raise ConfigError("target", str(err)) from None

    return ExperimentConfig(
        target=raw["target"],
        sampler=raw["sampler"],
        eta=float(raw["eta"]) if has_eta else None,
        eta_grid=dict(raw["eta_grid"]) if has_grid else None,
        chains=chains,
        samples=samples,
        burn_in=burn_in,
        thinning=thinning,
        seeds=tuple(seeds),
        out=raw.get("out"),
        floor_eps=float(floor_eps),
        bias_correction=bias_correction,
        dump_samples=bool(raw.get("dump_samples", False)),
        threads=threads,
    )


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON experiment config."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError("<file>", f"invalid JSON at line {err.lineno}: {err.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "top level must be a JSON object")
    return _validate(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate an in-memory config dict (same rules as parse_config)."""
    return _validate(raw)


# ---------------------------------------------------------------------------
# Grid execution
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    eta_index: int
    eta: float
    seed: int
    summary: Optional[ChainSummary] = None
    error: Optional[str] = None
    wall_time_per_step: Optional[float] = None
    samples_by_chain: Optional[list[np.ndarray]] = None
    kept_meta_by_chain: Optional[list[tuple[np.ndarray, np.ndarray]]] = None


@dataclass
class GridResult:
    target_name: str
    sampler: str
    etas: np.ndarray
    seeds: tuple[int, ...]
    cells: list[CellResult]
    best: Optional[dict] = None
    selection_metric: str = "kl"

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.cells if c.error is not None)


def _chain_task(raw_cfg: dict, eta: float, seed: int, chain_index: int):
    """One (eta, seed, chain) unit of work; module-level for process pools."""
    cfg = config_from_dict(raw_cfg)
    target = resolve_target(cfg.target)
    return run_chain(target, cfg.sampler_config(eta), seed, chain_index)


def _cell_from_reports(cfg, target, eta_index, eta, seed, reports, keep_samples):
    merged = RunReport(
        target.name,
        cfg.sampler,
        reports[0].cfg,
        [c for r in reports for c in r.chains],
    )
    summary = summarize(merged, target)
    cell = CellResult(
        eta_index=eta_index,
        eta=float(eta),
        seed=seed,
        summary=summary,
        wall_time_per_step=summary.wall_time_per_step,
    )
    if keep_samples:
        ordered = sorted(merged.chains, key=lambda c: c.chain_index)
        cell.samples_by_chain = [c.samples for c in ordered]
        cell.kept_meta_by_chain = [(c.kept_iterations, c.kept_accepted) for c in ordered]
    return cell


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None) -> GridResult:
    """Run all (eta, seed, chain) triples and pool them into cell summaries.

    Per-cell failures are recorded and the run continues. The parallelism
    unit is the chain; results are gathered by key, so launch order never
    affects the output.
    """
    target = resolve_target(cfg.target)
    etas = cfg.eta_values()
    n_threads = threads if threads is not None else cfg.threads
    raw_cfg = _config_as_raw(cfg)

    keys = [
        (ei, seed, chain)
        for ei in range(len(etas))
        for seed in cfg.seeds
        for chain in range(cfg.chains)
    ]
    reports: dict[tuple, object] = {}
    if n_threads > 1:
        with ProcessPoolExecutor(max_workers=n_threads) as pool:
            futures = {
                key: pool.submit(_chain_task, raw_cfg, float(etas[key[0]]), key[1], key[2])
                for key in keys
            }
            for key, future in futures.items():
                try:
                    reports[key] = future.result()
                except Exception as err:  # noqa: BLE001 - recorded per cell
                    reports[key] = err
    else:
        for key in keys:
            try:
                reports[key] = _chain_task(raw_cfg, float(etas[key[0]]), key[1], key[2])
            except Exception as err:  # noqa: BLE001
                reports[key] = err

    cells = []
    for ei, eta in enumerate(etas):
        for seed in cfg.seeds:
            chain_reports = [reports[(ei, seed, chain)] for chain in range(cfg.chains)]
            errors = [r for r in chain_reports if isinstance(r, Exception)]
            if errors:
                cells.append(
                    CellResult(eta_index=ei, eta=float(eta), seed=seed, error=str(errors[0]))
                )
                continue
            try:
                cells.append(
                    _cell_from_reports(cfg, target, ei, eta, seed, chain_reports, cfg.dump_samples)
                )
            except Exception as err:  # noqa: BLE001
                cells.append(
                    CellResult(eta_index=ei, eta=float(eta), seed=seed, error=str(err))
                )

    metric = "kl" if target.w_index is not None else "mean_logp"
    result = GridResult(
        target_name=target.name,
        sampler=cfg.sampler,
        etas=etas,
        seeds=cfg.seeds,
        cells=cells,
        selection_metric=metric,
    )
    result.best = _select_best(result)
    return result


def _select_best(result: GridResult) -> Optional[dict]:
    """Best step size: lowest mean KL for scale-variable targets, highest
    mean log-density otherwise; ties break toward the smaller eta."""
    per_eta: list[tuple[int, list[CellResult]]] = []
    for ei in range(len(result.etas)):
        ok = [c for c in result.cells if c.eta_index == ei and c.summary is not None]
        if ok:
            per_eta.append((ei, ok))
    if not per_eta:
        return None

    def cell_metric(cell: CellResult) -> float:
        if result.selection_metric == "kl":
            return cell.summary.kl if cell.summary.kl is not None else math.nan
        return cell.summary.mean_logp

    scored = []
    for ei, ok in per_eta:
        values = np.array([cell_metric(c) for c in ok], dtype=float)
        if np.any(np.isnan(values)):
            continue
        scored.append((ei, float(values.mean()), float(values.std(ddof=1)) if len(values) > 1 else 0.0, ok))
    if not scored:
        return None
    if result.selection_metric == "kl":
        best = min(scored, key=lambda item: (item[1], item[0]))
    else:
        best = max(scored, key=lambda item: (item[1], -item[0]))
    ei, mean_value, std_value, ok = best

    def mean_of(attr):
        vals = [getattr(c.summary, attr) for c in ok]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "eta_index": ei,
        "eta": float(result.etas[ei]),
        "metric": result.selection_metric,
        "mean": mean_value,
        "std": std_value,
        "per_seed": {
            str(c.seed): cell_metric(c) for c in sorted(ok, key=lambda c: c.seed)
        },
        "mean_ess_w": mean_of("ess_w"),
        "mean_ess_theta": mean_of("ess_theta_mean"),
        "mean_accept_rate": mean_of("acceptance_rate"),
    }


def _config_as_raw(cfg: ExperimentConfig) -> dict:
    raw = asdict(cfg)
    raw["seeds"] = list(cfg.seeds)
    if raw["eta"] is None:
        raw.pop("eta")
    if raw["eta_grid"] is None:
        raw.pop("eta_grid")
    if raw["out"] is None:
        raw.pop("out")
    return raw


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return format(float(value), ".17g")


def _summary_cell_dict(cell: CellResult) -> dict:
    base = {"eta": cell.eta, "eta_index": cell.eta_index, "seed": cell.seed}
    if cell.error is not None:
        base["error"] = cell.error
        return base
    s = cell.summary
    base.update(
        {
            "kl": s.kl,
            "ess_w": s.ess_w,
            "ess_theta_mean": s.ess_theta_mean,
            "accept_rate": s.acceptance_rate,
            "mean_logp": s.mean_logp,
            "floored_steps": s.floored_steps,
            "n_samples": s.n_samples,
            "n_chains": s.n_chains,
            "mean": [float(x) for x in s.mean],
            "variance": None if s.variance is None else [float(x) for x in s.variance],
        }
    )
    return base


def emit_report(result: GridResult, out_dir, cfg: Optional[ExperimentConfig] = None) -> dict:
    """Write summary.json, grid.csv and best.json; returns the paths.

    Timestamps and wall-clock figures live only in the metadata block, so
    the rest of every file is a pure function of (config, seeds).
    """
    if not result.cells:
        raise ValueError("empty grid result")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cells = sorted(result.cells, key=lambda c: (c.eta_index, c.seed))

    grid_path = out / "grid.csv"
    with open(grid_path, "w") as fh:
        fh.write("eta,seed,kl,ess_w,ess_theta_mean,accept_rate\n")
        for cell in cells:
            s = cell.summary
            fh.write(
                ",".join(
                    [
                        _fmt(cell.eta),
                        str(cell.seed),
                        _fmt(None if s is None else s.kl),
                        _fmt(None if s is None else s.ess_w),
                        _fmt(None if s is None else s.ess_theta_mean),
                        _fmt(None if s is None else s.acceptance_rate),
                    ]
                )
                + "\n"
            )

    summary_path = out / "summary.json"
    payload = {
        "schema_version": 1,
        "target": result.target_name,
        "sampler": result.sampler,
        "config": _config_as_raw(cfg) if cfg is not None else None,
        "etas": [float(e) for e in result.etas],
        "seeds": list(result.seeds),
        "cells": [_summary_cell_dict(c) for c in cells],
        "best": result.best,
        "failures": [
            {"eta": c.eta, "seed": c.seed, "error": c.error} for c in cells if c.error
        ],
        "metadata": {
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "backend": _backend.select_backend(),
            "versions": {"fmala": fmala.__version__, "numpy": np.__version__},
            "wall_time_per_step": [c.wall_time_per_step for c in cells],
        },
    }
    with open(summary_path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")

    best_path = out / "best.json"
    with open(best_path, "w") as fh:
        json.dump(result.best, fh, indent=1, sort_keys=True)
        fh.write("\n")

    paths = {"summary": summary_path, "grid": grid_path, "best": best_path}

    dumped = []
    for cell in cells:
        if cell.samples_by_chain is None:
            continue
        for chain_index, samples in enumerate(cell.samples_by_chain):
            iters, accepted = cell.kept_meta_by_chain[chain_index]
            name = f"samples_e{cell.eta_index:03d}_s{cell.seed}_c{chain_index}.csv"
            path = out / name
            with open(path, "w") as fh:
                dim = samples.shape[1]
                fh.write("iteration,accepted," + ",".join(f"theta{i}" for i in range(dim)) + "\n")
                for row in range(samples.shape[0]):
                    fields = [str(int(iters[row])), str(int(accepted[row]))]
                    fields += [format(x, ".17g") for x in samples[row]]
                    fh.write(",".join(fields) + "\n")
            dumped.append(path)
    if dumped:
        paths["samples"] = dumped
    return paths


# ---------------------------------------------------------------------------
# Self checks (CLI `check` subcommand)
# ---------------------------------------------------------------------------


def run_self_checks() -> list[tuple[str, bool, str]]:
    """Quick finite-difference and moment checks; returns (name, ok, detail)."""
    from fmala.fwd_ad import eval_f1, eval_f2
    from fmala import targets as tg
    from fmala.tangent import RngStream, estimator_moments_analytic

    checks: list[tuple[str, bool, str]] = []
    rng = np.random.default_rng(0)
    models = [
        tg.funnel(10),
        tg.gaussian(5, sigma=1.3),
        tg.rosenbrock(scale=1.0),
        tg.logistic_posterior(tg.make_cluster_dataset(n=50, d_in=5, n_classes=3, seed=0)),
        tg.bnn_posterior(tg.make_curve_dataset(n=16, seed=0), hidden=(8, 8)),
    ]

    for target in models:
        worst_1 = 0.0
        worst_2 = 0.0
        for _ in range(5):
            theta = rng.normal(size=target.dim) * 0.4
            v = rng.normal(size=target.dim)
            v /= np.linalg.norm(v)
            f, jvp = eval_f1(target, theta, v)
            h = 1e-5
            plain = lambda th: float(target.log_density(th))  # noqa: E731
            fd1 = (plain(theta + h * v) - plain(theta - h * v)) / (2 * h)
            worst_1 = max(worst_1, abs(jvp - fd1) / (1.0 + abs(jvp)))
            _, _, vhv = eval_f2(target, theta, v)
            h2 = 1e-4
            fd2 = (plain(theta + h2 * v) - 2 * plain(theta) + plain(theta - h2 * v)) / (h2 * h2)
            worst_2 = max(worst_2, abs(vhv - fd2) / (1.0 + abs(vhv)))
        checks.append(
            (f"jvp-vs-central-diff[{target.name}]", worst_1 <= 1e-6, f"worst rel {worst_1:.2e}")
        )
        checks.append(
            (f"vhv-vs-second-diff[{target.name}]", worst_2 <= 1e-3, f"worst rel {worst_2:.2e}")
        )

    stream = RngStream(0, 0, "tangent")
    d, n = 10, 20_000
    draws = stream.normal_block((n, d))
    draws /= np.linalg.norm(draws, axis=1, keepdims=True)
    norm_ok = bool(np.all(np.abs(np.linalg.norm(draws, axis=1) - 1.0) <= 1e-12))
    checks.append(("sphere-unit-norm", norm_ok, f"{n} draws in {d}d"))
    sq_gap = float(np.abs((draws ** 2).mean(axis=0) - 1.0 / d).max())
    checks.append(("sphere-second-moment", sq_gap < 5e-3, f"max |E[v_i^2]-1/d| {sq_gap:.2e}"))

    grad = np.array([3.0, -1.0, 0.5, 2.0, -2.5])
    stream5 = RngStream(1, 0, "tangent")
    draws5 = stream5.normal_block((50_000, 5))
    draws5 /= np.linalg.norm(draws5, axis=1, keepdims=True)
    estimates = (draws5 @ grad)[:, None] * draws5
    worst = 0.0
    for i in range(5):
        mean, var = estimator_moments_analytic(grad, i)
        se = math.sqrt(var / draws5.shape[0])
        worst = max(worst, abs(float(estimates[:, i].mean()) - mean) / se)
    checks.append(("estimator-moments-mc", worst < 5.0, f"worst |z| {worst:.2f} (5 sigma)"))

    funnel = tg.funnel(10)
    value = float(funnel.log_density(np.zeros(11)))
    expect = -5.0 * math.log(2 * math.pi) - 0.5 * math.log(18 * math.pi)
    checks.append(("funnel-normalizer", abs(value - expect) < 1e-12, f"{value:.6f}"))
    return checks
