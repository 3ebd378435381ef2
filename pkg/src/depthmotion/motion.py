"""Ego-motion estimation and iterative residual motion-field refinement.

The residual field starts at zero; each iteration re-warps the source with
the accumulated field, feeds the (target, warped) pair to the motion head
and adds the predicted increment.  Gradients flow through every unrolled
iteration.
"""

from dataclasses import dataclass

from . import autodiff as ad
from . import geometry as geo
from . import networks as nets


@dataclass
class MotionEstimate:
    pose: geo.PoseSE3
    residual: geo.MotionField
    iterations_run: int
    deltas: list  # per-iteration MotionField increments


def estimate_ego(weights, target, source, cfg):
    """Relative pose target -> source from the concatenated frame pair."""
    return nets.pose_head(weights, ad.concat([target, source], axis=0), cfg)


def refine_motion(weights, target, source, depth, pose, intr, cfg, n_iter):
    """Accumulate residual-translation increments over n_iter warp cycles."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    _, h, w = target.shape
    residual = ad.zeros((3, h, w))
    deltas = []
    for _ in range(n_iter):
        warped, _ = geo.synthesize_view(source, depth, pose, intr, motion=residual)
        delta = nets.motion_head(weights, ad.concat([target, warped], axis=0), cfg)
        residual = ad.add(residual, delta.values)
        deltas.append(delta)
    return MotionEstimate(pose=pose, residual=geo.MotionField(residual),
                          iterations_run=n_iter, deltas=deltas)
