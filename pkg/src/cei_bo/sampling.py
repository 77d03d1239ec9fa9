"""Low-discrepancy initial designs."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import qmc

from .exceptions import InputError

MAX_SOBOL_DIM = 64
_EDGE = 2.0**-31


def sobol_init(dim: int, n: int, seed: int | None = 0, scramble: bool = True) -> np.ndarray:
    """``n`` Sobol points in the open unit cube.

    With ``scramble=True`` (the default) an Owen-scrambled sequence seeded by
    ``seed`` is returned.  The unscrambled sequence skips its leading origin
    point, so it starts ``0.5, 0.75, 0.25, ...`` in the first coordinate.
    """
    if dim < 1 or n < 1:
        raise InputError(f"sobol_init needs dim >= 1 and n >= 1 (got dim={dim}, n={n})")
    if dim > MAX_SOBOL_DIM:
        raise InputError(f"sobol_init supports at most {MAX_SOBOL_DIM} dimensions, got {dim}")
    with warnings.catch_warnings():
        # Non power-of-two sample sizes are expected for a 3d-point design.
        warnings.simplefilter("ignore", UserWarning)
        if scramble:
            engine = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(seed))
        else:
            engine = qmc.Sobol(dim, scramble=False)
            engine.fast_forward(1)
        pts = engine.random(n)
    return np.clip(pts, _EDGE, 1.0 - _EDGE)
