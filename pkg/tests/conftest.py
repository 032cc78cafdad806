"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from fedlfd.nn import ParamVector

# Gradient comparison policy: every element must satisfy
#   |analytic - numeric| <= max(GRAD_ABS_FLOOR, GRAD_REL_TOL * |analytic|)
# i.e. relative error <= 1e-4, with an absolute floor of 1e-8 that governs
# elements too small for a meaningful relative comparison.
GRAD_REL_TOL = 1e-4
GRAD_ABS_FLOOR = 1e-8


def assert_grad_close(analytic, numeric, rel=GRAD_REL_TOL, floor=GRAD_ABS_FLOOR):
    if isinstance(analytic, ParamVector):
        analytic = analytic.values
    if isinstance(numeric, ParamVector):
        numeric = numeric.values
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = np.asarray(numeric, dtype=float).ravel()
    assert analytic.shape == numeric.shape
    diff = np.abs(analytic - numeric)
    bound = np.maximum(floor, rel * np.abs(analytic))
    worst = int(np.argmax(diff - bound))
    assert np.all(diff <= bound), (
        f"gradient mismatch at element {worst}: analytic={analytic[worst]!r} "
        f"numeric={numeric[worst]!r} |diff|={diff[worst]:.3e} bound={bound[worst]:.3e}"
    )
