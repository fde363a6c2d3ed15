"""Post-hoc sample quality metrics.

KL divergence of a Gaussian fitted to the scale-variable marginal, effective
sample size with Geyer's initial monotone positive-pair truncation, expected
calibration error for classifiers, and the per-run summary that pools chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from fmala.samplers import RunReport
from fmala.targets import TargetModel


@dataclass
class ChainSummary:
    """Pooled per-run metrics: moments, acceptance, ESS, KL where defined."""

    n_chains: int
    n_samples: int  # kept samples pooled over chains
    mean: np.ndarray
    variance: Optional[np.ndarray]
    acceptance_rate: Optional[float]
    floored_steps: int
    kl: Optional[float]
    ess: Optional[np.ndarray]  # per parameter, summed over chains
    ess_w: Optional[float]
    ess_theta_mean: Optional[float]
    mean_logp: float
    wall_time_per_step: Optional[float]


def gaussian_kl(mu_q: float, var_q: float, mu_p: float, var_p: float) -> float:
    """Closed-form Gaussian divergence, exactly as reported for the funnel:

        0.5 * (var_q/var_p + (mu_q - mu_p)^2/var_p - 1 + log(var_p/var_q))
    """
    if var_p <= 0 or var_q <= 0:
        raise ValueError("variances must be positive")
    return 0.5 * (
        var_q / var_p + (mu_q - mu_p) ** 2 / var_p - 1.0 + math.log(var_p / var_q)
    )


def gaussian_fit_kl(w_samples, mu_p: float, var_p: float) -> float:
    """Fit a Gaussian to the samples by moments and return its divergence
    from N(mu_p, var_p). Sample variance uses the 1/(N-1) estimator."""
    w = np.asarray(w_samples, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise ValueError("need at least two scalar samples")
    mu_q = float(np.mean(w))
    var_q = float(np.var(w, ddof=1))
    if var_q <= 0 or not np.isfinite(var_q):
        raise ValueError(f"degenerate sample variance {var_q!r}")
    return gaussian_kl(mu_q, var_q, mu_p, var_p)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased (1/N) autocovariance via FFT; works column-wise on 2-D input."""
    n = x.shape[0]
    centered = x - x.mean(axis=0)
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(centered, n=size, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=0)[:n].real
    return acov / n


def ess(samples) -> float:
    """Effective sample size ``N / tau`` for one chain.

    ``tau = -1 + 2 * sum(Gamma_m)`` over the initial positive, monotonized
    pair sums ``Gamma_m = rho_{2m} + rho_{2m+1}``. Anticorrelated chains give
    ``tau < 1``; the result is clipped to (0, N].
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise ValueError("ess expects a single chain as a 1-D array")
    n = x.size
    if n < 10:
        raise ValueError(f"need at least 10 samples, got {n}")
    acov = _autocovariance(x)
    if acov[0] <= 0 or not np.isfinite(acov[0]):
        raise ValueError("chain has zero variance")
    rho = acov / acov[0]
    return _ess_from_rho(rho, n)


def _ess_from_rho(rho: np.ndarray, n: int) -> float:
    n_pairs = len(rho) // 2
    pair_sums = rho[0 : 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    positive = np.nonzero(pair_sums <= 0.0)[0]
    cutoff = int(positive[0]) if positive.size else n_pairs
    if cutoff == 0:
        return float(n)  # immediate anticorrelation: super-efficient, cap at N
    kept = np.minimum.accumulate(pair_sums[:cutoff])
    tau = -1.0 + 2.0 * float(np.sum(kept))
    if tau <= 1.0:
        return float(n)
    return float(n) / tau


def ess_matrix(samples: np.ndarray, constant: Optional[float] = None) -> np.ndarray:
    """Per-column ESS for one chain's (N, P) sample matrix.

    A zero-variance column raises unless ``constant`` gives the value to
    report for it (a frozen chain carries one sample's worth of information,
    so the summary pipeline passes 1.0).
    """
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n < 10:
        raise ValueError(f"need at least 10 samples, got {n}")
    acov = _autocovariance(x)
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        if acov[0, j] <= 0 or not np.isfinite(acov[0, j]):
            if constant is None:
                raise ValueError(f"parameter column {j} has zero variance")
            out[j] = constant
            continue
        out[j] = _ess_from_rho(acov[:, j] / acov[0, j], n)
    return out


def ece(probs, labels, bins: int = 100) -> float:
    """Expected calibration error with equal-width confidence bins.

    Bins partition (0, 1] on the max-class probability; the result is the
    bin-weighted absolute gap between accuracy and mean confidence.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("probs must be a non-empty N x C matrix")
    if labels.shape != (probs.shape[0],):
        raise ValueError("labels must have one entry per row of probs")
    if bins < 1:
        raise ValueError("bins must be positive")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1")
    confidence = probs.max(axis=1)
    correct = probs.argmax(axis=1) == labels
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.digitize(confidence, edges[1:-1], right=True)
    total = probs.shape[0]
    out = 0.0
    for b in range(bins):
        mask = idx == b
        count = int(np.count_nonzero(mask))
        if count == 0:
            continue
        gap = abs(float(np.mean(correct[mask])) - float(np.mean(confidence[mask])))
        out += count / total * gap
    return out


def summarize(report: RunReport, target: TargetModel) -> ChainSummary:
    """Pool a run's chains into one summary.

    The KL metric uses the pooled scale-variable column against its exact
    marginal; ESS is computed per chain and summed across chains.
    """
    if not report.chains:
        raise ValueError("report has no chains")
    ordered = sorted(report.chains, key=lambda c: c.chain_index)
    pooled = np.concatenate([c.samples for c in ordered], axis=0)
    if pooled.shape[0] == 0:
        raise ValueError("no post-burn-in samples to summarize")
    pooled_logp = np.concatenate([c.logp for c in ordered])

    mean = pooled.mean(axis=0)
    variance = pooled.var(axis=0, ddof=1) if pooled.shape[0] > 1 else None

    kl = None
    if target.w_index is not None and target.w_marginal is not None and pooled.shape[0] > 1:
        mu_p, var_p = target.w_marginal
        kl = gaussian_fit_kl(pooled[:, target.w_index], mu_p, var_p)

    ess_total = None
    ess_w = None
    ess_theta_mean = None
    if all(c.samples.shape[0] >= 10 for c in ordered):
        ess_total = np.zeros(pooled.shape[1])
        for c in ordered:
            ess_total += ess_matrix(c.samples, constant=1.0)
        if target.w_index is not None:
            ess_w = float(ess_total[target.w_index])
            rest = np.delete(ess_total, target.w_index)
            ess_theta_mean = float(rest.mean()) if rest.size else None
        else:
            ess_theta_mean = float(ess_total.mean())

    total_steps = sum(c.n_steps for c in ordered)
    wall = sum(c.wall_time for c in ordered)
    return ChainSummary(
        n_chains=len(ordered),
        n_samples=int(pooled.shape[0]),
        mean=mean,
        variance=variance,
        acceptance_rate=report.acceptance_rate,
        floored_steps=sum(int(np.count_nonzero(c.floored)) for c in ordered),
        kl=kl,
        ess=ess_total,
        ess_w=ess_w,
        ess_theta_mean=ess_theta_mean,
        mean_logp=float(pooled_logp.mean()),
        wall_time_per_step=(wall / total_steps) if total_steps else None,
    )
