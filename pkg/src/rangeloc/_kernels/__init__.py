"""Refinement-loop kernels: compiled extension with a numpy fallback.

The descent loop runs thousands of iterations over 3x3 matrices and short
measurement arrays, so interpreter overhead dominates in pure Python. A
Cython kernel is compiled at install time when possible; selection happens
here at import. Set ``RANGELOC_PURE_PYTHON=1`` to force the fallback.

Both backends implement ``refine_kernel`` with identical semantics and
status codes: 0 gradient tolerance reached, 1 objective decrease below ftol,
2 iteration limit, 3 line search found no decrease, 4 degenerate range.
"""

import os

from . import _refine_py

_BACKENDS = {"python": _refine_py}

if os.environ.get("RANGELOC_PURE_PYTHON", "") != "1":
    try:
        from . import _refine_c  # type: ignore[attr-defined]

        _BACKENDS["compiled"] = _refine_c
    except ImportError:
        pass

DEFAULT_BACKEND = "compiled" if "compiled" in _BACKENDS else "python"

STATUS_NAMES = {
    0: "gtol",
    1: "ftol",
    2: "max_iterations",
    3: "no_decrease",
    4: "degenerate_range",
}


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_kernel(name: str = "auto"):
    if name in (None, "auto"):
        name = DEFAULT_BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        ) from None
