"""Weighted least-squares relative scale between two pointmaps of one view.

Different forward passes of the frontend regress the same view's pointmap at
inconsistent scales. The closed-form minimizer of

    sum_x w_x || P_a(x) - s * P_b(x) ||^2

recovers the factor s that multiplies the later pass ``pm_b`` to match the
first processed pass ``pm_a``. Per-pixel weights are the product of the two
confidence grids over jointly valid pixels.
"""

from __future__ import annotations

import numpy as np

from .two_view import LocalPointmap

DENOMINATOR_GUARD = 1e-12


class DimensionMismatch(ValueError):
    """The two pointmaps do not share grid dimensions."""


class DegenerateDenominator(ValueError):
    """All weighted points sit at the origin; scale unobservable."""


def pair_confidence_weights(pm_a: LocalPointmap, pm_b: LocalPointmap) -> np.ndarray:
    """Elementwise confidence product, zero outside the joint validity mask."""
    if pm_a.points.shape != pm_b.points.shape:
        raise DimensionMismatch(
            f"pointmap grids differ: {pm_a.points.shape[:2]} vs {pm_b.points.shape[:2]}"
        )
    joint = pm_a.validity & pm_b.validity
    return np.where(joint, pm_a.confidence * pm_b.confidence, 0.0)


def relative_scale(
    pm_a: LocalPointmap,
    pm_b: LocalPointmap,
    min_weight: float = 0.0,
) -> float:
    """Closed-form WLS scale s with pm_a ~= s * pm_b.

    Args:
        pm_a: pointmap of the first processed pass.
        pm_b: pointmap of the later pass; the returned scale multiplies it.
        min_weight: optional threshold; pixels with confidence product below
            it are excluded from the solve.

    Raises:
        DegenerateDenominator: no usable pixels, or the weighted squared
            norms of pm_b fall below 1e-12 of their unweighted sum.
    """
    w = pair_confidence_weights(pm_a, pm_b)
    if min_weight > 0.0:
        w = np.where(w >= min_weight, w, 0.0)
    mask = w > 0.0
    if not mask.any():
        raise DegenerateDenominator("no jointly valid pixels with positive weight")
    pa = pm_a.points[mask]
    pb = pm_b.points[mask]
    ww = w[mask]
    sq = np.einsum("ij,ij->i", pb, pb)
    denominator = float(ww @ sq)
    if denominator <= DENOMINATOR_GUARD * max(float(np.sum(sq)), 1.0):
        raise DegenerateDenominator("weighted points too close to the origin")
    numerator = float(ww @ np.einsum("ij,ij->i", pa, pb))
    return numerator / denominator
