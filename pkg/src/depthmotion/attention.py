"""Deformable temporal cross-attention seeded by projected reference points.

A query pixel of the target feature map attends to K learned sample
locations around its geometric projection into a source feature map; the
same mechanism with the query grid as reference points performs the
self-refinement pass.  The per-head value/output projections are stored
stacked: rows m*(C/M):(m+1)*(C/M) of value_proj are head m's value
projection and the matching columns of out_proj are its output projection,
so the head sum is a single matmul.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Array


@dataclass
class DeformAttnParams:
    heads: int
    points: int
    dim: int
    value_proj: Array   # (C, C) stacked per-head value projections
    out_proj: Array     # (C, C) stacked per-head output projections
    offset_w: Array     # (M*K*2, C)
    offset_b: Array     # (M*K*2,)
    weight_w: Array     # (M*K, C)
    weight_b: Array     # (M*K,)

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("feature dim %d not divisible by %d heads" % (self.dim, self.heads))
        expect = {
            "value_proj": (self.dim, self.dim),
            "out_proj": (self.dim, self.dim),
            "offset_w": (self.heads * self.points * 2, self.dim),
            "offset_b": (self.heads * self.points * 2,),
            "weight_w": (self.heads * self.points, self.dim),
            "weight_b": (self.heads * self.points,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError("%s has shape %s, expected %s" % (name, got, shape))


@dataclass
class ReferencePoints:
    coords: Array          # (2, H', W') continuous source-plane positions
    validity: np.ndarray   # (H', W') bool; False where behind camera / out of bounds


def compute_reference_points(coarse_depth, pose, intr, scale):
    """Project every feature-map location into the source plane.

    coarse_depth: (1, H', W') Array at the feature resolution.  The depth is
    detached first: attention geometry must not backpropagate into the
    auxiliary depth head.  Returns ReferencePoints at the same resolution.
    """
    depth = coarse_depth.values if hasattr(coarse_depth, "values") else coarse_depth
    depth = depth.detach()
    _, h, w = depth.shape
    intr_s = intr.scaled(2.0 ** -scale)
    grid = geo.pixel_grid(h, w)
    coords, _, in_front = geo.warp_points(
        ad.reshape(grid, (2, h * w)), ad.reshape(depth, (1, h * w)), pose, intr_s)
    x = coords.data[0]
    y = coords.data[1]
    eps = 1e-9
    in_bounds = (x >= -eps) & (x <= w - 1.0 + eps) & (y >= -eps) & (y <= h - 1.0 + eps)
    validity = (in_front & in_bounds).reshape(h, w)
    return ReferencePoints(coords=ad.reshape(coords, (2, h, w)), validity=validity)


def _tile_rows(row, n_rows):
    """(1, N) -> (n_rows, N), differentiable."""
    return ad.matmul(ad.constant(np.ones((n_rows, 1))), row)


def _attend(query_feat, value_feat, coords, validity, params):
    c, h, w = query_feat.shape
    m, k = params.heads, params.points
    ch = c // m
    n = h * w

    q = ad.reshape(query_feat, (c, n))
    ones_n = ad.constant(np.ones((1, n)))
    offsets = ad.add(ad.matmul(params.offset_w, q),
                     ad.matmul(ad.reshape(params.offset_b, (m * k * 2, 1)), ones_n))
    logits = ad.add(ad.matmul(params.weight_w, q),
                    ad.matmul(ad.reshape(params.weight_b, (m * k, 1)), ones_n))
    weights = ad.softmax(ad.reshape(logits, (m, k, n)), axis=1)

    projected = ad.matmul(params.value_proj, ad.reshape(value_feat, (c, n)))
    head_maps = [ad.reshape(projected[i * ch:(i + 1) * ch, :], (ch, h, w)) for i in range(m)]

    base = ad.reshape(coords, (2, n))
    offsets = ad.reshape(offsets, (m, k, 2, n))
    valid_tile = ad.constant(np.broadcast_to(validity.reshape(1, n).astype(np.float64), (ch, n)).copy())

    head_outputs = []
    for i in range(m):
        acc = None
        for j in range(k):
            sample_at = ad.add(base, offsets[i, j])
            gathered = ad.bilinear_gather(head_maps[i], sample_at)
            wgt = _tile_rows(ad.reshape(weights[i, j], (1, n)), ch)
            term = ad.mul(gathered, wgt)
            acc = term if acc is None else ad.add(acc, term)
        head_outputs.append(ad.mul(acc, valid_tile))
    stacked = ad.concat(head_outputs, axis=0)
    out = ad.matmul(params.out_proj, stacked)
    return ad.reshape(out, (c, h, w))


def deformable_attend(query_feat, value_feat, refs, params):
    """Cross-view deformable attention; output has the query's shape."""
    if query_feat.shape != value_feat.shape:
        raise ad.ShapeError("deformable_attend: query %s vs value %s"
                            % (query_feat.shape, value_feat.shape))
    if query_feat.shape[0] != params.dim:
        raise ad.ShapeError("deformable_attend: feature dim %d, params expect %d"
                            % (query_feat.shape[0], params.dim))
    return _attend(query_feat, value_feat, refs.coords, refs.validity, params)


def self_refine(enhanced_feat, params):
    """Deformable self-attention with the query grid as reference points."""
    _, h, w = enhanced_feat.shape
    grid = geo.pixel_grid(h, w)
    validity = np.ones((h, w), dtype=bool)
    return _attend(enhanced_feat, enhanced_feat, grid, validity, params)


def fuse_views(per_source_feats, fuse_w):
    """Channel-concatenate per-source aggregates and project back to C."""
    if not per_source_feats:
        raise ValueError("fuse_views: no source features")
    c, h, w = per_source_feats[0].shape
    flat = ad.concat([ad.reshape(f, (c, h * w)) for f in per_source_feats], axis=0)
    fused = ad.matmul(fuse_w, flat)
    return ad.reshape(fused, (c, h, w))


def truncated(params, points):
    """Params restricted to the first `points` sample locations per head.

    Evaluation-time sweep support: attention weights are re-normalized over
    the kept points by the softmax itself.
    """
    if points >= params.points:
        return params
    m, k = params.heads, params.points
    keep_off = np.zeros(m * k * 2, dtype=bool)
    keep_wt = np.zeros(m * k, dtype=bool)
    for i in range(m):
        keep_wt[i * k:i * k + points] = True
        keep_off[2 * (i * k):2 * (i * k + points)] = True
    sel_off = np.where(keep_off)[0]
    sel_wt = np.where(keep_wt)[0]
    return DeformAttnParams(
        heads=m, points=points, dim=params.dim,
        value_proj=params.value_proj, out_proj=params.out_proj,
        offset_w=Array(params.offset_w.data[sel_off]),
        offset_b=Array(params.offset_b.data[sel_off]),
        weight_w=Array(params.weight_w.data[sel_wt]),
        weight_b=Array(params.weight_b.data[sel_wt]),
    )
