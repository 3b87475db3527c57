"""Line-of-sight air-to-ground channel gains, including worst-case eavesdropper bounds.

All gains are linear. Every function broadcasts over leading axes, so a whole
(N, 2) trajectory can be passed where a single point is expected.
"""

from typing import NamedTuple

import numpy as np

from skyjam import config

DISC_TOL = config.FEASIBILITY_TOL  # meters of slack on the outside-the-disc precondition


class DomainError(ValueError):
    pass


class Position2D(NamedTuple):
    x: float
    y: float


def _sq_dist(q, w):
    diff = np.asarray(q, dtype=float) - np.asarray(w, dtype=float)
    return np.sum(diff * diff, axis=-1)


def los_gain(q, w, altitude: float, ref_gain: float):
    """Gain ρ₀ / (‖q − w‖² + H²) between a UAV at horizontal position q and ground node w."""
    return ref_gain / (_sq_dist(q, w) + altitude * altitude)


def worst_case_gain_se(q_s, eve_center, eve_radius: float, alt_s: float, ref_gain: float, *, strict: bool = True):
    """Upper bound of the S→E gain over every eavesdropper position in the disc.

    With ``strict`` the source must stay outside the disc. Without it the
    horizontal gap is clamped at zero, which is the exact worst case for a
    source hovering over the disc; only the feasibility checker uses that.
    """
    if eve_radius == 0:
        return los_gain(q_s, eve_center, alt_s, ref_gain)
    dist = np.sqrt(_sq_dist(q_s, eve_center))
    if strict and np.any(dist < eve_radius - DISC_TOL):
        raise DomainError("UAV inside uncertainty disc")
    gap = np.maximum(dist - eve_radius, 0.0)
    return ref_gain / (gap * gap + alt_s * alt_s)


def worst_case_gain_je(q_j, eve_center, eve_radius: float, alt_j: float, ref_gain: float):
    """Lower bound of the J→E gain over every eavesdropper position in the disc."""
    if eve_radius == 0:
        return los_gain(q_j, eve_center, alt_j, ref_gain)
    reach = np.sqrt(_sq_dist(q_j, eve_center)) + eve_radius
    return ref_gain / (reach * reach + alt_j * alt_j)
