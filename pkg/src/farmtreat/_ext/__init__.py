"""Kernel selection: compiled extension when importable, pure Python otherwise.

Set ``FARMTREAT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("FARMTREAT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py

lasso_cd_gram = _impl.lasso_cd_gram
best_swap = _impl.best_swap
COMPILED = _impl is not _kernels_py

__all__ = ["COMPILED", "best_swap", "lasso_cd_gram"]
