"""Backend selection: compiled chain loops when available, pure Python otherwise.

The compiled extension is probed once at import. ``FMALA_BACKEND`` overrides
the choice at call time (``python`` forces the fallback, ``compiled`` errors
out if the extension is missing), which is how the benchmark and the twin
tests pin each side.
"""

from __future__ import annotations

import os

try:
    from fmala import _kernels  # noqa: F401

    _COMPILED_AVAILABLE = True
except ImportError:
    _COMPILED_AVAILABLE = False

_CHOICES = ("compiled", "python")


def compiled_available() -> bool:
    return _COMPILED_AVAILABLE


def select_backend(force: str | None = None) -> str:
    """Resolve the backend for one call: explicit arg, then env, then auto."""
    choice = force if force is not None else os.environ.get("FMALA_BACKEND", "").strip().lower()
    if choice in ("", "auto"):
        return "compiled" if _COMPILED_AVAILABLE else "python"
    if choice not in _CHOICES:
        raise ValueError(f"unknown backend '{choice}'; one of {_CHOICES} or 'auto'")
    if choice == "compiled" and not _COMPILED_AVAILABLE:
        raise RuntimeError("compiled backend requested but the extension is not built")
    return choice
