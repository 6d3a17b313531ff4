"""Selects the compiled kernel extension when available, else the fallback.

Set the environment variable ``WALKOPS_PURE_PYTHON=1`` to force the
fallback (used by the benchmark to compare both backends in one process).
"""

import os

if os.environ.get("WALKOPS_PURE_PYTHON"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

BACKEND = kernels.BACKEND
scatter_add = kernels.scatter_add
scatter_add_outer = kernels.scatter_add_outer
