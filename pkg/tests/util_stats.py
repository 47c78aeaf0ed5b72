"""Shared statistical helpers for the test suite."""

import numpy as np
from scipy import stats


def chi2_gof(observed_counts, expected_counts, min_expected=10.0):
    """Chi-square goodness of fit with pooling of low-expectation bins.

    Bins whose expected count falls below ``min_expected`` are pooled into a
    single group so the chi-square approximation stays valid.  Returns the
    p-value; degrees of freedom are (groups - 1) because the expected masses
    are exact, not fitted.
    """
    observed = np.asarray(observed_counts, dtype=np.float64)
    expected = np.asarray(expected_counts, dtype=np.float64)
    big = expected >= min_expected
    obs = list(observed[big])
    exp = list(expected[big])
    if np.any(~big):
        obs.append(observed[~big].sum())
        exp.append(expected[~big].sum())
    obs = np.asarray(obs)
    exp = np.asarray(exp)
    # guard: a pooled group can still be almost empty when background is zero
    keep = exp > 1e-9
    obs, exp = obs[keep], exp[keep]
    # renormalize the tiny mismatch between total mass and draws
    exp = exp * (obs.sum() / exp.sum())
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(obs) - 1
    return float(stats.chi2.sf(stat, dof))
