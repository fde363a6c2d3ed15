"""Backpropagation-free gradient-based MCMC.

Forward-mode directional derivatives (first and second order) drive four
Metropolis-adjusted Langevin samplers, with a reverse-gradient MALA baseline,
target library, diagnostics and a benchmark CLI.
"""

from fmala.fwd_ad import (
    Dual,
    Dual2,
    DomainError,
    EvaluationError,
    TangentVector,
    eval_f1,
    eval_f2,
)

__version__ = "0.1.0"

__all__ = [
    "Dual",
    "Dual2",
    "DomainError",
    "EvaluationError",
    "TangentVector",
    "eval_f1",
    "eval_f2",
    "__version__",
]
