from __future__ import annotations

import numpy as np

from Algorithms.coefficients import SinrCoefficients
from Algorithms.ul_maxmin_fixedpoint import UplinkMaxMinFixedPoint


class CentralizedDownlinkMaxMin(UplinkMaxMinFixedPoint):
    """Fixed-point max-min fairness under per-AP power limits.

    After each step the powers are scaled so that the most loaded AP radiates
    exactly rho_max.
    """

    name = "CentralizedDownlinkMaxMin"
    forms = ("dl-centralized",)

    def _normalize(self, coeffs: SinrCoefficients, x: np.ndarray) -> np.ndarray:
        return coeffs.max_power * x / coeffs.usage(x).max()
