"""Pure-python/numpy twin of the compiled kernels in ``_kernels.pyx``.

``np.add.at`` is unbuffered and processes indices in order, so both
backends accumulate in the same order and produce bit-identical results.
"""

import numpy as np

BACKEND = "python"


def scatter_add(acc, idx, vals):
    """acc[idx[i]] += vals[i], sequentially in index order."""
    np.add.at(acc, idx, vals)


def scatter_add_outer(acc, rows, level_vals, mu_vals):
    """acc[rows[i, j]] += level_vals[i] * mu_vals[j]."""
    weights = level_vals[:, None] * mu_vals[None, :]
    np.add.at(acc, rows.ravel(), weights.ravel())
