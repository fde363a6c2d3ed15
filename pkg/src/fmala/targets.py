"""Differentiable log-density models.

Every model is generic over the scalar kind: the same code path evaluates on
plain numpy arrays, on ``Dual`` (value + directional derivative) and on
``Dual2`` (value + first and second directional derivatives). Parameters are
always packed into one flat vector; the packing layout is documented per
target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from fmala import fwd_ad as fm
from fmala.fwd_ad import eval_f1

LOG_2PI = float(np.log(2.0 * np.pi))

# Compiled fast-path ids; must stay in sync with _kernels.pyx.
KERNEL_FUNNEL = 1
KERNEL_GAUSSIAN = 2


@dataclass(frozen=True)
class TargetModel:
    """A log-density over ``dim`` packed parameters.

    ``log_density`` accepts a flat parameter vector as a plain array or as a
    lifted Dual/Dual2 and returns the same kind. ``analytic_gradient`` is
    optional; when absent the exact gradient is assembled from basis-tangent
    forward passes. Instances are immutable and safe to share across chains.
    """

    name: str
    dim: int
    log_density: Callable
    analytic_gradient: Optional[Callable] = None
    init_sd: float = 0.1
    # Marginal metadata for scale-variable targets: index of the scale
    # coordinate and its exact Gaussian marginal (mean, variance).
    w_index: Optional[int] = None
    w_marginal: Optional[tuple[float, float]] = None
    # Compiled fast-path hook (None: always use the generic lifted path).
    kernel_id: Optional[int] = None
    kernel_params: tuple = ()
    # Posterior-predictive helper for data-backed targets.
    predict: Optional[Callable] = None


# ---------------------------------------------------------------------------
# Closed-form targets
# ---------------------------------------------------------------------------


def funnel(d: int = 10) -> TargetModel:
    """Hierarchical funnel: w ~ N(0, 9) controls the variance of d latents.

    Packing: ``(theta_1 .. theta_d, w)``, total dimension d+1. Each latent is
    ``theta_i | w ~ N(0, exp(-w))`` with exp(-w) the variance, so the log
    density expands to

        d/2 * w - exp(w)/2 * sum(theta^2) - w^2/18
        - d/2 * log(2 pi) - 1/2 * log(18 pi)
    """
    if d < 1:
        raise ValueError("funnel needs at least one latent coordinate")
    const = -0.5 * d * LOG_2PI - 0.5 * math.log(18.0 * math.pi)

    def log_density(x):
        th = x[:d]
        w = x[d]
        sq = fm.sum(fm.square(th))
        return 0.5 * d * w - 0.5 * (fm.exp(w) * sq) - fm.square(w) / 18.0 + const

    def gradient(x):
        x = np.asarray(x, dtype=float)
        th, w = x[:d], x[d]
        ew = np.exp(w)
        g = np.empty(d + 1)
        g[:d] = -ew * th
        g[d] = 0.5 * d - 0.5 * ew * float(np.sum(th * th)) - w / 9.0
        return g

    return TargetModel(
        name=f"funnel{d}",
        dim=d + 1,
        log_density=log_density,
        analytic_gradient=gradient,
        w_index=d,
        w_marginal=(0.0, 9.0),
        kernel_id=KERNEL_FUNNEL,
        kernel_params=(float(d),),
    )


def gaussian(d: int = 1, sigma: float = 1.0) -> TargetModel:
    """Isotropic zero-mean Gaussian; exact-sampler correctness oracle."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    inv_var = 1.0 / (sigma * sigma)
    const = -0.5 * d * (LOG_2PI + 2.0 * math.log(sigma))

    def log_density(x):
        return -0.5 * (fm.sum(fm.square(x)) * inv_var) + const

    def gradient(x):
        return -np.asarray(x, dtype=float) * inv_var

    return TargetModel(
        name=f"gaussian{d}",
        dim=d,
        log_density=log_density,
        analytic_gradient=gradient,
        kernel_id=KERNEL_GAUSSIAN,
        kernel_params=(float(sigma),),
    )


def rosenbrock(a: float = 1.0, b: float = 100.0, scale: float = 0.05) -> TargetModel:
    """Two-dimensional banana-shaped density ``-scale * rosenbrock(theta)``.

    The default scale of 0.05 keeps acceptance rates usable for
    illustration runs; unit scale reproduces the raw valley.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")

    def log_density(x):
        x0, x1 = x[0], x[1]
        return -scale * (fm.square(a - x0) + b * fm.square(x1 - fm.square(x0)))

    def gradient(x):
        x = np.asarray(x, dtype=float)
        x0, x1 = x[0], x[1]
        inner = x1 - x0 * x0
        return np.array(
            [
                -scale * (2.0 * (x0 - a) - 4.0 * b * x0 * inner),
                -scale * (2.0 * b * inner),
            ]
        )

    return TargetModel(
        name="rosenbrock",
        dim=2,
        log_density=log_density,
        analytic_gradient=gradient,
    )


# ---------------------------------------------------------------------------
# Data-backed targets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledDataset:
    """Design matrix plus labels (integer classes or real regression targets)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        labels = np.asarray(self.labels)
        if inputs.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if labels.shape[0] != inputs.shape[0]:
            raise ValueError(
                f"{labels.shape[0]} labels for {inputs.shape[0]} input rows"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_classes(self) -> int:
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("regression dataset has no classes")
        return int(self.labels.max()) + 1

    @classmethod
    def from_csv(cls, path) -> "LabeledDataset":
        """Load ``header row; feature columns then label column``."""
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if raw.shape[1] < 2:
            raise ValueError("csv needs at least one feature column and a label column")
        features, label_col = raw[:, :-1], raw[:, -1]
        if np.all(label_col == np.round(label_col)):
            labels = label_col.astype(int)
            if labels.min() < 0:
                raise ValueError("class labels must be non-negative")
        else:
            labels = label_col
        return cls(features, labels)


def make_cluster_dataset(
    n: int = 500, d_in: int = 20, n_classes: int = 3, seed: int = 0, spread: float = 2.0
) -> LabeledDataset:
    """Synthetic Gaussian-cluster classification data keyed by seed."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 901)))
    centers = rng.normal(size=(n_classes, d_in)) * spread
    labels = rng.integers(0, n_classes, size=n)
    inputs = centers[labels] + rng.normal(size=(n, d_in))
    return LabeledDataset(inputs, labels.astype(int))


def make_curve_dataset(n: int = 64, seed: int = 0, noise_sd: float = 0.05) -> LabeledDataset:
    """Synthetic 1-D regression data: a smooth wave sampled in three bands."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 902)))
    bands = np.array([(-2.0, -0.8), (-0.3, 0.5), (1.0, 2.0)])
    picks = rng.integers(0, len(bands), size=n)
    lo, hi = bands[picks, 0], bands[picks, 1]
    x = rng.uniform(lo, hi)
    y = 0.5 * np.sin(2.5 * x) + 0.1 * x + noise_sd * rng.normal(size=n)
    return LabeledDataset(x[:, None], y)


def logistic_posterior(data: LabeledDataset, n_classes: int | None = None) -> TargetModel:
    """Multinomial logistic regression with a unit Gaussian prior.

    Packing: ``(W.ravel(), b)`` with W of shape (d_in, n_classes) in row-major
    order, followed by the n_classes bias entries. ``n_classes`` defaults to
    the number of classes present in the data.
    """
    x_mat = data.inputs
    labels = np.asarray(data.labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("logistic regression needs integer class labels")
    n, d_in = x_mat.shape
    n_classes = data.n_classes if n_classes is None else int(n_classes)
    if labels.max() >= n_classes:
        raise ValueError(f"labels reach class {labels.max()} but n_classes={n_classes}")
    dim = d_in * n_classes + n_classes
    rows = np.arange(n)
    prior_const = -0.5 * dim * LOG_2PI

    def log_density(theta):
        w = theta[: d_in * n_classes].reshape(d_in, n_classes)
        b = theta[d_in * n_classes :]
        logits = fm.matmul(x_mat, w) + b
        loglik = fm.sum(logits[rows, labels]) - fm.sum(fm.logsumexp(logits, axis=1))
        prior = -0.5 * fm.sum(fm.square(theta)) + prior_const
        return loglik + prior

    def class_probs(theta, inputs):
        theta = np.asarray(theta, dtype=float)
        w = theta[: d_in * n_classes].reshape(d_in, n_classes)
        b = theta[d_in * n_classes :]
        logits = np.atleast_2d(inputs) @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        return probs

    def gradient(theta):
        theta = np.asarray(theta, dtype=float)
        resid = -class_probs(theta, x_mat)
        resid[rows, labels] += 1.0
        grad_w = x_mat.T @ resid
        grad_b = resid.sum(axis=0)
        return np.concatenate([grad_w.ravel(), grad_b]) - theta

    return TargetModel(
        name=f"logistic_n{n}_d{d_in}_c{n_classes}",
        dim=dim,
        log_density=log_density,
        analytic_gradient=gradient,
        predict=class_probs,
    )


def _layer_sizes(hidden: tuple[int, ...], d_in: int, d_out: int) -> list[tuple[int, int]]:
    widths = (d_in, *hidden, d_out)
    return list(zip(widths[:-1], widths[1:]))


def mlp_param_count(hidden: tuple[int, ...], d_in: int = 1, d_out: int = 1) -> int:
    return sum(i * o + o for i, o in _layer_sizes(hidden, d_in, d_out))


def bnn_posterior(
    data: LabeledDataset,
    hidden: tuple[int, ...] = (16, 16),
    sigma_prior: float = 0.1,
    sigma_lik: float = 0.025,
) -> TargetModel:
    """Fully connected tanh regression network with Gaussian prior/likelihood.

    Packing: per layer, W (in x out) in row-major order then the bias; layers
    from input to output. The final layer is linear.
    """
    if sigma_prior <= 0 or sigma_lik <= 0:
        raise ValueError("sigma_prior and sigma_lik must be positive")
    x_mat = data.inputs
    y = np.asarray(data.labels, dtype=float)[:, None]
    n, d_in = x_mat.shape
    sizes = _layer_sizes(tuple(hidden), d_in, 1)
    dim = sum(i * o + o for i, o in sizes)
    inv_lik_var = 1.0 / (sigma_lik * sigma_lik)
    inv_prior_var = 1.0 / (sigma_prior * sigma_prior)
    lik_const = -0.5 * n * (LOG_2PI + 2.0 * math.log(sigma_lik))
    prior_const = -0.5 * dim * (LOG_2PI + 2.0 * math.log(sigma_prior))

    def forward(theta, inputs):
        h = inputs
        offset = 0
        last = len(sizes) - 1
        for li, (fan_in, fan_out) in enumerate(sizes):
            w = theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = theta[offset : offset + fan_out]
            offset += fan_out
            h = fm.matmul(h, w) + b
            if li != last:
                h = fm.tanh(h)
        return h

    def log_density(theta):
        pred = forward(theta, x_mat)
        resid = pred - y
        loglik = -0.5 * (fm.sum(fm.square(resid)) * inv_lik_var) + lik_const
        prior = -0.5 * (fm.sum(fm.square(theta)) * inv_prior_var) + prior_const
        return loglik + prior

    def predict(theta, inputs):
        return np.asarray(forward(np.asarray(theta, dtype=float), np.atleast_2d(inputs)))

    return TargetModel(
        name=f"bnn_n{n}_" + "x".join(str(s) for s in (d_in, *hidden, 1)),
        dim=dim,
        log_density=log_density,
        predict=predict,
    )


# ---------------------------------------------------------------------------
# Gradients and instrumentation
# ---------------------------------------------------------------------------


def full_gradient(target: TargetModel, theta) -> np.ndarray:
    """Exact gradient of the log-density.

    Uses the analytic gradient when the target provides one; otherwise
    assembles it from ``dim`` basis-tangent forward passes. Either way the
    result is exact to floating point, never a sphere estimate.
    """
    theta = np.asarray(theta, dtype=float)
    if target.analytic_gradient is not None:
        return np.asarray(target.analytic_gradient(theta), dtype=float)
    grad = np.empty(target.dim)
    basis = np.zeros(target.dim)
    for i in range(target.dim):
        basis[i] = 1.0
        _, grad[i] = eval_f1(target, theta, basis)
        basis[i] = 0.0
    return grad


class EvalCounter:
    """Mutable tally of log-density and analytic-gradient evaluations."""

    def __init__(self):
        self.evals = 0
        self.grad_evals = 0

    def reset(self):
        self.evals = 0
        self.grad_evals = 0


def counting_target(target: TargetModel) -> tuple[TargetModel, EvalCounter]:
    """Wrap a target so every evaluation is tallied.

    The wrapper drops the compiled fast-path hook, so chains driven through
    it always take the generic per-step route being instrumented.
    """
    counter = EvalCounter()

    def counted_log_density(x):
        counter.evals += 1
        return target.log_density(x)

    counted_gradient = None
    if target.analytic_gradient is not None:

        def counted_gradient(x):
            counter.grad_evals += 1
            return target.analytic_gradient(x)

    wrapped = replace(
        target,
        log_density=counted_log_density,
        analytic_gradient=counted_gradient,
        kernel_id=None,
        kernel_params=(),
    )
    return wrapped, counter


# ---------------------------------------------------------------------------
# Registry used by the harness/CLI
# ---------------------------------------------------------------------------


def resolve_target(spec) -> TargetModel:
    """Build a target from a name string or a ``{"name": ..., params}`` dict.

    Shorthand names ``funnel<d>`` and ``gaussian<d>`` encode the dimension.
    """
    if isinstance(spec, str):
        name, params = spec, {}
    elif isinstance(spec, dict):
        params = dict(spec)
        try:
            name = params.pop("name")
        except KeyError:
            raise ValueError("target spec dict needs a 'name' key") from None
    else:
        raise ValueError(f"target spec must be a string or dict, got {type(spec).__name__}")

    for prefix, builder in (("funnel", funnel), ("gaussian", gaussian)):
        if name.startswith(prefix) and name != prefix:
            suffix = name[len(prefix) :]
            if not suffix.isdigit():
                raise ValueError(f"unknown target '{name}'")
            return builder(d=int(suffix), **params)

    if name == "funnel":
        return funnel(**params)
    if name == "gaussian":
        return gaussian(**params)
    if name == "rosenbrock":
        return rosenbrock(**params)
    if name == "logistic":
        data_params = {
            k: params.pop(k) for k in ("n", "d_in", "n_classes", "seed", "spread") if k in params
        }
        if params:
            raise ValueError(f"unknown logistic parameters {sorted(params)}")
        return logistic_posterior(make_cluster_dataset(**data_params))
    if name == "bnn":
        data_params = {k: params.pop(k) for k in ("n", "seed", "noise_sd") if k in params}
        if "hidden" in params:
            params["hidden"] = tuple(params["hidden"])
        return bnn_posterior(make_curve_dataset(**data_params), **params)
    raise ValueError(f"unknown target '{name}'")
