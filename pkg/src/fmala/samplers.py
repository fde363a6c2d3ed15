"""Langevin transition kernels and the chain runner.

Five kernels share one Metropolis-Hastings skeleton:

* ``mala``           - reverse-gradient baseline: full-gradient drift.
* ``fmala``          - one first-order forward pass per side; fresh tangent
                       for the reverse proposal.
* ``line-fmala``     - a single tangent defines a line; the proposal reduces
                       to a scalar update along it.
* ``pc-fmala``       - second-order forward pass; drift and noise scaled by
                       the absolute tangent curvature.
* ``pc-line-fmala``  - line sampler with curvature-scaled scalar updates.

Default scaling follows the bias-corrected scheme: the fmala drift and both
line-sampler terms use the dimension-coupled step ``eta * sqrt(D)`` while
fmala noise keeps ``eta``; pc-fmala shrinks its noise by ``1/sqrt(D)``;
pc-line-fmala is unchanged by the correction. ``bias_correction="uncorrected"``
switches every kernel back to the raw mechanism for comparison runs.

Tangent densities never enter the acceptance ratio: tangents are uniform on
the unit sphere, so the forward and reverse tangent factors cancel.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fmala import _backend
from fmala.fwd_ad import EvaluationError, eval_f1, eval_f2
from fmala.tangent import RngStream, make_streams, sample_unit_sphere
from fmala.targets import TargetModel

ALGORITHMS = ("mala", "fmala", "line-fmala", "pc-fmala", "pc-line-fmala")
BIAS_CORRECTION_MODES = ("paper-default", "uncorrected")


@dataclass(frozen=True)
class SamplerConfig:
    """Kernel selection plus step-size and schedule knobs.

    ``eta`` is always the raw step size; any dimension coupling is applied
    internally by the kernel. ``floor_eps`` clamps the absolute tangent
    curvature away from zero in the preconditioned kernels.
    """

    algorithm: str
    eta: float
    n_steps: int
    burn_in: int = 0
    thinning: int = 1
    floor_eps: float = 1e-8
    bias_correction: str = "paper-default"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm '{self.algorithm}'; one of {ALGORITHMS}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.floor_eps > 0:
            raise ValueError(f"floor_eps must be positive, got {self.floor_eps}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be non-negative, got {self.n_steps}")
        if not 0 <= self.burn_in <= self.n_steps:
            raise ValueError(f"burn_in must lie in [0, n_steps], got {self.burn_in}")
        if self.thinning < 1:
            raise ValueError(f"thinning must be at least 1, got {self.thinning}")
        if self.bias_correction not in BIAS_CORRECTION_MODES:
            raise ValueError(
                f"unknown bias_correction '{self.bias_correction}'; one of {BIAS_CORRECTION_MODES}"
            )


@dataclass
class ChainState:
    """Current position with its cached log-density and the chain's streams.

    The cached ``logp`` always equals a fresh evaluation at ``theta``; it is
    refreshed from the step's own proposal evaluation on accept.
    """

    theta: np.ndarray
    logp: float
    iteration: int = 0
    streams: dict[str, RngStream] = field(default_factory=dict)


@dataclass
class StepOutcome:
    """One proposal with its log-acceptance and the forward scalars used."""

    proposal: np.ndarray
    logp_proposal: float
    gamma: float
    accepted: bool
    jvp_t: Optional[float] = None
    jvp_s: Optional[float] = None
    vhv_t: Optional[float] = None
    vhv_s: Optional[float] = None
    floored: bool = False


def mh_accept(gamma: float, rng: RngStream) -> bool:
    """Accept iff ``log u < gamma`` for u uniform on (0, 1)."""
    if gamma > 0:
        raise ValueError(f"log-acceptance must be <= 0, got {gamma}")
    u = rng.uniform()
    if u == 0.0:
        return gamma > -math.inf
    return math.log(u) < gamma


# ---------------------------------------------------------------------------
# Proposal log-densities (normalizer-free where variances cancel). Exposed as
# module-level helpers so the forward/reverse antisymmetry is directly
# testable on logged scalars.
# ---------------------------------------------------------------------------


def isotropic_logq(x: np.ndarray, mean: np.ndarray, var: float, full: bool = False) -> float:
    """Log of N(x; mean, var*I); the normalizer is included only on request."""
    sq = float(np.sum((x - mean) ** 2))
    out = -0.5 * sq / var
    if full:
        out -= 0.5 * x.size * math.log(2.0 * math.pi * var)
    return out


def scalar_logq(x: float, mean: float, var: float, full: bool = False) -> float:
    out = -0.5 * (x - mean) ** 2 / var
    if full:
        out -= 0.5 * math.log(2.0 * math.pi * var)
    return out


def _eta_scaled(cfg: SamplerConfig, dim: int) -> float:
    if cfg.bias_correction == "paper-default":
        return cfg.eta * math.sqrt(dim)
    return cfg.eta


def _value_and_grad(
    target: TargetModel, theta: np.ndarray, allow_zero_density: bool = False
) -> tuple[float, np.ndarray]:
    """One gradient-bearing evaluation: log-density and exact gradient.

    With an analytic gradient this is a single fused evaluation; the fallback
    assembles the gradient from ``dim`` basis-tangent forward passes on top
    of one plain evaluation. A zero-density point returns ``(-inf, nan)``
    when allowed (proposals) and raises otherwise.
    """
    with np.errstate(all="ignore"):
        f = float(target.log_density(theta))
    if not np.isfinite(f):
        if allow_zero_density and f == -math.inf:
            return f, np.full(target.dim, np.nan)
        raise EvaluationError(f"{target.name}: non-finite log-density {f!r}")
    if target.analytic_gradient is not None:
        return f, np.asarray(target.analytic_gradient(theta), dtype=float)
    grad = np.empty(target.dim)
    basis = np.zeros(target.dim)
    for i in range(target.dim):
        basis[i] = 1.0
        _, grad[i] = eval_f1(target, theta, basis)
        basis[i] = 0.0
    return f, grad


# ---------------------------------------------------------------------------
# Transition kernels
# ---------------------------------------------------------------------------


def mala_step(state: ChainState, target: TargetModel, cfg: SamplerConfig) -> StepOutcome:
    """Full-gradient Langevin proposal with exact MH correction."""
    eta = cfg.eta
    var = eta * eta
    theta = state.theta
    f_t, grad_t = _value_and_grad(target, theta)
    mean_fwd = theta + 0.5 * var * grad_t
    z = state.streams["noise"].normals(target.dim)
    proposal = mean_fwd + eta * z
    f_s, grad_s = _value_and_grad(target, proposal, allow_zero_density=True)
    if f_s == -math.inf:
        gamma = -math.inf
    else:
        mean_rev = proposal + 0.5 * var * grad_s
        gamma = f_s - f_t + isotropic_logq(theta, mean_rev, var) - isotropic_logq(
            proposal, mean_fwd, var
        )
        gamma = min(0.0, gamma)
    accepted = mh_accept(gamma, state.streams["accept"])
    return StepOutcome(proposal, f_s, gamma, accepted)


def fmala_step(state: ChainState, target: TargetModel, cfg: SamplerConfig) -> StepOutcome:
    """Forward-mode MALA: drift along a fresh sphere tangent on each side.

    The drift carries the dimension-coupled step; the noise and the
    acceptance densities keep the raw ``eta``.
    """
    eta = cfg.eta
    var = eta * eta
    drift = 0.5 * _eta_scaled(cfg, target.dim) ** 2
    theta = state.theta

    v_t = sample_unit_sphere(state.streams["tangent"], target.dim).components
    f_t, jvp_t = eval_f1(target, theta, v_t)
    mean_fwd = theta + (drift * jvp_t) * v_t
    z = state.streams["noise"].normals(target.dim)
    proposal = mean_fwd + eta * z

    v_s = sample_unit_sphere(state.streams["tangent"], target.dim).components
    f_s, jvp_s = eval_f1(target, proposal, v_s, allow_zero_density=True)
    if f_s == -math.inf:
        gamma = -math.inf
    else:
        mean_rev = proposal + (drift * jvp_s) * v_s
        gamma = f_s - f_t + isotropic_logq(theta, mean_rev, var) - isotropic_logq(
            proposal, mean_fwd, var
        )
        gamma = min(0.0, gamma)
    accepted = mh_accept(gamma, state.streams["accept"])
    return StepOutcome(proposal, f_s, gamma, accepted, jvp_t=jvp_t, jvp_s=jvp_s)


def line_fmala_step(state: ChainState, target: TargetModel, cfg: SamplerConfig) -> StepOutcome:
    """Line sampler: one tangent for both directions, scalar MH along it."""
    eta_line = _eta_scaled(cfg, target.dim)
    var = eta_line * eta_line
    theta = state.theta

    v = sample_unit_sphere(state.streams["tangent"], target.dim).components
    f_t, jvp_t = eval_f1(target, theta, v)
    alpha_t = float(theta @ v)
    mean_fwd = alpha_t + 0.5 * var * jvp_t
    z = state.streams["noise"].normal()
    alpha_s = mean_fwd + eta_line * z
    proposal = theta + (alpha_s - alpha_t) * v

    f_s, jvp_s = eval_f1(target, proposal, v, allow_zero_density=True)
    if f_s == -math.inf:
        gamma = -math.inf
    else:
        mean_rev = alpha_s + 0.5 * var * jvp_s
        gamma = f_s - f_t + scalar_logq(alpha_t, mean_rev, var) - scalar_logq(
            alpha_s, mean_fwd, var
        )
        gamma = min(0.0, gamma)
    accepted = mh_accept(gamma, state.streams["accept"])
    return StepOutcome(proposal, f_s, gamma, accepted, jvp_t=jvp_t, jvp_s=jvp_s)


def pc_fmala_step(state: ChainState, target: TargetModel, cfg: SamplerConfig) -> StepOutcome:
    """Curvature-preconditioned forward-mode MALA.

    Drift and noise are scaled by the absolute tangent curvature |v^T H v|
    (clamped at ``floor_eps``); the corrected noise carries an extra
    1/sqrt(D). Simulation and acceptance use identical covariances.
    """
    eta = cfg.eta
    noise_dim = float(target.dim) if cfg.bias_correction == "paper-default" else 1.0
    theta = state.theta

    v_t = sample_unit_sphere(state.streams["tangent"], target.dim).components
    f_t, jvp_t, vhv_t = eval_f2(target, theta, v_t)
    h_t = abs(vhv_t)
    floored = h_t < cfg.floor_eps
    h_t = max(h_t, cfg.floor_eps)
    var_fwd = eta * eta / (noise_dim * h_t)
    mean_fwd = theta + (0.5 * eta * eta / h_t * jvp_t) * v_t
    z = state.streams["noise"].normals(target.dim)
    proposal = mean_fwd + math.sqrt(var_fwd) * z

    v_s = sample_unit_sphere(state.streams["tangent"], target.dim).components
    f_s, jvp_s, vhv_s = eval_f2(target, proposal, v_s)
    h_s = abs(vhv_s)
    floored = floored or h_s < cfg.floor_eps
    h_s = max(h_s, cfg.floor_eps)
    var_rev = eta * eta / (noise_dim * h_s)
    mean_rev = proposal + (0.5 * eta * eta / h_s * jvp_s) * v_s

    gamma = (
        f_s
        - f_t
        + isotropic_logq(theta, mean_rev, var_rev, full=True)
        - isotropic_logq(proposal, mean_fwd, var_fwd, full=True)
    )
    gamma = min(0.0, gamma)
    accepted = mh_accept(gamma, state.streams["accept"])
    return StepOutcome(
        proposal, f_s, gamma, accepted, jvp_t=jvp_t, jvp_s=jvp_s, vhv_t=vhv_t, vhv_s=vhv_s,
        floored=floored,
    )


def pc_line_fmala_step(state: ChainState, target: TargetModel, cfg: SamplerConfig) -> StepOutcome:
    """Curvature-preconditioned line sampler; identical under either
    bias-correction mode (the dimension factors cancel)."""
    eta = cfg.eta
    theta = state.theta

    v = sample_unit_sphere(state.streams["tangent"], target.dim).components
    f_t, jvp_t, vhv_t = eval_f2(target, theta, v)
    h_t = abs(vhv_t)
    floored = h_t < cfg.floor_eps
    h_t = max(h_t, cfg.floor_eps)
    var_fwd = eta * eta / h_t
    alpha_t = float(theta @ v)
    mean_fwd = alpha_t + 0.5 * eta * eta / h_t * jvp_t
    z = state.streams["noise"].normal()
    alpha_s = mean_fwd + math.sqrt(var_fwd) * z
    proposal = theta + (alpha_s - alpha_t) * v

    f_s, jvp_s, vhv_s = eval_f2(target, proposal, v)
    h_s = abs(vhv_s)
    floored = floored or h_s < cfg.floor_eps
    h_s = max(h_s, cfg.floor_eps)
    var_rev = eta * eta / h_s
    mean_rev = alpha_s + 0.5 * eta * eta / h_s * jvp_s

    gamma = (
        f_s
        - f_t
        + scalar_logq(alpha_t, mean_rev, var_rev, full=True)
        - scalar_logq(alpha_s, mean_fwd, var_fwd, full=True)
    )
    gamma = min(0.0, gamma)
    accepted = mh_accept(gamma, state.streams["accept"])
    return StepOutcome(
        proposal, f_s, gamma, accepted, jvp_t=jvp_t, jvp_s=jvp_s, vhv_t=vhv_t, vhv_s=vhv_s,
        floored=floored,
    )


STEP_FUNCTIONS = {
    "mala": mala_step,
    "fmala": fmala_step,
    "line-fmala": line_fmala_step,
    "pc-fmala": pc_fmala_step,
    "pc-line-fmala": pc_line_fmala_step,
}


# ---------------------------------------------------------------------------
# Chain runner
# ---------------------------------------------------------------------------


@dataclass
class ChainRecord:
    """Everything recorded for one chain: kept samples plus the per-step
    acceptance trace."""

    seed: int
    chain_index: int
    samples: np.ndarray  # kept (post burn-in, thinned) positions
    logp: np.ndarray  # log-density at each kept sample
    kept_iterations: np.ndarray
    kept_accepted: np.ndarray
    gamma: np.ndarray  # per step, full length
    accepted: np.ndarray  # per step
    floored: np.ndarray  # per step
    scalars: np.ndarray  # per step: jvp_t, jvp_s, vhv_t, vhv_s (nan if unused)
    wall_time: float
    backend: str

    @property
    def n_steps(self) -> int:
        return self.accepted.shape[0]

    @property
    def acceptance_rate(self) -> Optional[float]:
        if self.n_steps == 0:
            return None
        return float(np.count_nonzero(self.accepted)) / self.n_steps


@dataclass
class RunReport:
    """Chains of one run plus the configuration echo."""

    target_name: str
    algorithm: str
    cfg: SamplerConfig
    chains: list[ChainRecord]

    @property
    def acceptance_rate(self) -> Optional[float]:
        total = sum(c.n_steps for c in self.chains)
        if total == 0:
            return None
        hits = sum(int(np.count_nonzero(c.accepted)) for c in self.chains)
        return hits / total

    def pooled_samples(self) -> np.ndarray:
        ordered = sorted(self.chains, key=lambda c: c.chain_index)
        return np.concatenate([c.samples for c in ordered], axis=0)

    def pooled_logp(self) -> np.ndarray:
        ordered = sorted(self.chains, key=lambda c: c.chain_index)
        return np.concatenate([c.logp for c in ordered], axis=0)


def init_chain(target: TargetModel, cfg: SamplerConfig, seed: int, chain_index: int) -> ChainState:
    """Draw the start point from N(0, init_sd^2 I) on the chain's init stream."""
    streams = make_streams(seed, chain_index)
    theta0 = streams["init"].normals(target.dim) * target.init_sd
    logp0 = float(target.log_density(theta0))
    if not np.isfinite(logp0):
        raise EvaluationError(f"{target.name}: non-finite log-density at initialization")
    return ChainState(theta=theta0, logp=logp0, iteration=0, streams=streams)


def run_chain(
    target: TargetModel,
    cfg: SamplerConfig,
    seed: int,
    chain_index: int,
    force_backend: Optional[str] = None,
) -> RunReport:
    """Run one chain of ``cfg.algorithm`` and record every step.

    Deterministic given ``(seed, chain_index)``. Dispatches to the compiled
    loop when the target carries a kernel hook and the compiled backend is
    active; the pure-Python loop is the fallback.
    """
    backend = _backend.select_backend(force_backend)
    use_compiled = backend == "compiled" and target.kernel_id is not None
    start = time.perf_counter()
    state = init_chain(target, cfg, seed, chain_index)
    n = cfg.n_steps
    dim = target.dim

    thetas = np.empty((n, dim))
    logps = np.empty(n)
    gammas = np.empty(n)
    accepted = np.zeros(n, dtype=np.uint8)
    floored = np.zeros(n, dtype=np.uint8)
    scalars = np.full((n, 4), np.nan)

    if use_compiled:
        from fmala import _kernels

        try:
            _kernels.run_chain_loop(
                ALGORITHMS.index(cfg.algorithm),
                int(target.kernel_id),
                np.asarray(target.kernel_params, dtype=float),
                state.theta,
                float(state.logp),
                float(cfg.eta),
                float(cfg.floor_eps),
                cfg.bias_correction == "paper-default",
                state.streams["tangent"],
                state.streams["noise"],
                state.streams["accept"],
                thetas,
                logps,
                gammas,
                accepted,
                floored,
                scalars,
            )
        except RuntimeError as err:
            raise EvaluationError(str(err)) from err
        chain_backend = "compiled"
    else:
        step_fn = STEP_FUNCTIONS[cfg.algorithm]
        for t in range(n):
            outcome = step_fn(state, target, cfg)
            if outcome.accepted:
                state.theta = outcome.proposal
                state.logp = outcome.logp_proposal
            state.iteration += 1
            thetas[t] = state.theta
            logps[t] = state.logp
            gammas[t] = outcome.gamma
            accepted[t] = outcome.accepted
            floored[t] = outcome.floored
            scalars[t, 0] = np.nan if outcome.jvp_t is None else outcome.jvp_t
            scalars[t, 1] = np.nan if outcome.jvp_s is None else outcome.jvp_s
            scalars[t, 2] = np.nan if outcome.vhv_t is None else outcome.vhv_t
            scalars[t, 3] = np.nan if outcome.vhv_s is None else outcome.vhv_s
        chain_backend = "python"

    wall = time.perf_counter() - start
    kept = np.arange(cfg.burn_in, n, cfg.thinning, dtype=int)
    record = ChainRecord(
        seed=seed,
        chain_index=chain_index,
        samples=thetas[kept],
        logp=logps[kept],
        kept_iterations=kept,
        kept_accepted=accepted[kept].astype(bool),
        gamma=gammas,
        accepted=accepted.astype(bool),
        floored=floored.astype(bool),
        scalars=scalars,
        wall_time=wall,
        backend=chain_backend,
    )
    return RunReport(target.name, cfg.algorithm, cfg, [record])


def run_chains(
    target: TargetModel,
    cfg: SamplerConfig,
    seed: int,
    n_chains: int,
    force_backend: Optional[str] = None,
) -> RunReport:
    """Run ``n_chains`` independent chains keyed by (seed, chain index)."""
    if n_chains < 1:
        raise ValueError(f"need at least one chain, got {n_chains}")
    chains = []
    for chain_index in range(n_chains):
        report = run_chain(target, cfg, seed, chain_index, force_backend=force_backend)
        chains.extend(report.chains)
    return RunReport(target.name, cfg.algorithm, cfg, chains)
