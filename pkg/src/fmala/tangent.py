"""Tangent-direction sampling and the forward gradient estimator.

Random streams are counter-based (Philox) and keyed by
``(run seed, chain index, purpose)``, so every chain owns independent,
reproducible streams for initialization, tangent draws, proposal noise and
accept/reject uniforms. The same keys always give the same sequence, across
runs and platforms, and the sequence does not depend on how draws are
batched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fmala.fwd_ad import TangentVector

PURPOSES = ("init", "tangent", "noise", "accept")
_PURPOSE_CODE = {name: i for i, name in enumerate(PURPOSES)}

_MAX_REDRAWS = 100
_DEGENERATE_NORM = 1e-30


@dataclass
class RngStream:
    """Single-owner random stream for one ``(seed, chain, purpose)`` key.

    One stream per chain per purpose; never share a stream across threads.
    ``count`` tracks how many variates have been consumed.
    """

    seed: int
    chain: int
    purpose: str
    count: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.purpose not in _PURPOSE_CODE:
            raise ValueError(f"unknown stream purpose '{self.purpose}'; one of {PURPOSES}")
        key = np.random.SeedSequence((int(self.seed), int(self.chain), _PURPOSE_CODE[self.purpose]))
        self._gen = np.random.Generator(np.random.Philox(key))

    def normals(self, n: int) -> np.ndarray:
        self.count += int(n)
        return self._gen.standard_normal(n)

    def normal(self) -> float:
        self.count += 1
        return float(self._gen.standard_normal())

    def normal_block(self, shape: tuple[int, ...]) -> np.ndarray:
        """Batch draw; consumes the stream exactly like repeated ``normals``."""
        self.count += int(np.prod(shape))
        return self._gen.standard_normal(shape)

    def uniform(self) -> float:
        self.count += 1
        return float(self._gen.random())

    def uniform_block(self, n: int) -> np.ndarray:
        self.count += int(n)
        return self._gen.random(n)


def make_streams(seed: int, chain: int) -> dict[str, RngStream]:
    """All purpose streams for one chain."""
    return {purpose: RngStream(seed, chain, purpose) for purpose in PURPOSES}


def sample_unit_sphere(rng: RngStream, d: int) -> TangentVector:
    """Uniform draw from the unit sphere: a normalized standard Gaussian.

    Degenerate draws (norm below 1e-30) are redrawn; the redraw loop
    terminates almost surely and is hard-capped.
    """
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    for _ in range(_MAX_REDRAWS):
        g = rng.normals(d)
        norm = float(np.linalg.norm(g))
        if norm >= _DEGENERATE_NORM:
            return TangentVector(g / norm, unit=True)
    raise RuntimeError(f"sphere sampling failed after {_MAX_REDRAWS} degenerate draws")


def forward_gradient(jvp: float, v, d: int) -> np.ndarray:
    """Unbiased forward gradient estimate ``D * jvp * v_hat``.

    For tangents uniform on the sphere the unscaled estimate is biased by
    1/D per coordinate; scaling by the dimension removes the bias.
    """
    components = v.components if isinstance(v, TangentVector) else np.asarray(v, dtype=float)
    return (d * jvp) * components


def estimator_moments_analytic(grad, i: int) -> tuple[float, float]:
    """Closed-form mean and variance of the unscaled sphere estimator.

    For ``g_hat_i = (grad . v_hat) v_hat_i`` with ``v_hat`` uniform on the
    sphere in D dimensions:

        mean     = grad_i / D
        variance = [2 (D-1)/D * grad_i^2 + sum_{j != i} grad_j^2] / (D (D+2))
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient must be finite")
    d = grad.shape[0]
    if not 0 <= i < d:
        raise IndexError(f"coordinate {i} out of range for dimension {d}")
    gi2 = grad[i] ** 2
    rest = float(np.sum(grad ** 2) - gi2)
    mean = float(grad[i] / d)
    variance = (2.0 * (d - 1) / d * gi2 + rest) / (d * (d + 2))
    return mean, float(variance)
