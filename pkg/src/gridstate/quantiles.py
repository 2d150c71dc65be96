"""Normal and chi-square(2) quantiles used for intervals and ellipses."""
from __future__ import annotations

import math
from statistics import NormalDist

_STD_NORMAL = NormalDist()


def norm_ppf(p: float) -> float:
    """Inverse standard-normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


def two_sided_z(alpha: float) -> float:
    """``z_{alpha/2}``: the (1 - alpha/2) quantile of the standard normal."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return norm_ppf(1.0 - alpha / 2.0)


def chi2_2_ppf_upper(alpha: float) -> float:
    """``chi^2_{1-alpha,2}``, the quantile with upper tail ``alpha`` (two dof).

    The chi-square CDF with two degrees of freedom is ``1 - exp(-q/2)``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return -2.0 * math.log(alpha)
