"""The self-supervised objective: per-pixel minimum SSIM+L1 reprojection
with auto-masking, edge-aware smoothness for depth and motion, and the
concave sparsity penalty on the motion field."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
INVALID_PENALTY = 1e4


@dataclass(frozen=True)
class LossWeights:
    photo: float = 1.0           # reprojection
    motion_smooth: float = 0.01  # motion-field smoothness
    depth_smooth: float = 0.001  # depth smoothness
    sparsity: float = 0.01      # motion-field sparsity
    alpha: float = 0.85          # SSIM/L1 blend


@dataclass
class LossBreakdown:
    total: ad.Array
    photo: ad.Array
    motion_smooth: ad.Array
    depth_smooth: ad.Array
    sparsity: ad.Array
    auto_mask: np.ndarray = None          # H x W joint mask at full resolution
    per_source_masks: np.ndarray = None   # S x H x W diagnostic masks

    def values(self):
        return {
            "total": self.total.item(),
            "photo": self.photo.item(),
            "motion_smooth": self.motion_smooth.item(),
            "depth_smooth": self.depth_smooth.item(),
            "sparsity": self.sparsity.item(),
        }


def _box3(x):
    """3x3 mean filter with edge padding, per channel."""
    return ad.box3_mean(x)


def ssim(x, y):
    """Per-channel SSIM map over 3x3 windows; same shape as the inputs."""
    mu_x = _box3(x)
    mu_y = _box3(y)
    sigma_x = ad.sub(_box3(ad.mul(x, x)), ad.mul(mu_x, mu_x))
    sigma_y = ad.sub(_box3(ad.mul(y, y)), ad.mul(mu_y, mu_y))
    sigma_xy = ad.sub(_box3(ad.mul(x, y)), ad.mul(mu_x, mu_y))
    num = ad.mul(ad.add(ad.mul(ad.mul(mu_x, mu_y), 2.0), SSIM_C1),
                 ad.add(ad.mul(sigma_xy, 2.0), SSIM_C2))
    den = ad.mul(ad.add(ad.add(ad.mul(mu_x, mu_x), ad.mul(mu_y, mu_y)), SSIM_C1),
                 ad.add(ad.add(sigma_x, sigma_y), SSIM_C2))
    return ad.div(num, den)


def photometric(target, warped, validity=None, alpha=0.85):
    """Per-pixel SSIM+L1 blend (H x W); invalid pixels are zeroed if a
    validity mask is given (exclusion from any downstream reduction)."""
    l1 = ad.mean(ad.abs(ad.sub(target, warped)), axes=(0,))
    dssim = ad.mean(ad.mul(ad.sub(1.0, ssim(target, warped)), 0.5), axes=(0,))
    err = ad.add(ad.mul(dssim, alpha), ad.mul(l1, 1.0 - alpha))
    if validity is not None:
        err = ad.mul(err, ad.constant(np.asarray(validity, dtype=np.float64)))
    return err


def min_reprojection(target, warped_per_source, validities, source_imgs,
                     alpha=0.85, use_automask=True):
    """Per-pixel minimum over sources with the stationary-pixel auto-mask.

    Returns (scalar loss, joint auto-mask H x W, per-source masks S x H x W).
    Invalid pixels of a source are pushed out of the minimum; pixels valid
    in no source are excluded from the mean.
    """
    if not warped_per_source:
        raise ValueError("need at least one source view")
    h, w = target.shape[1:]
    reproj_maps = []
    for warped, valid in zip(warped_per_source, validities):
        err = photometric(target, warped, None, alpha)
        penalty = ad.constant((1.0 - valid) * INVALID_PENALTY)
        reproj_maps.append(ad.add(err, penalty))
    reproj = ad.min(ad.stack(reproj_maps, axis=0), axis=0) if len(reproj_maps) > 1 else reproj_maps[0]

    ident_maps = [photometric(target, src, None, alpha) for src in source_imgs]
    ident = ad.min(ad.stack(ident_maps, axis=0), axis=0) if len(ident_maps) > 1 else ident_maps[0]

    any_valid = np.zeros((h, w))
    for valid in validities:
        any_valid = np.maximum(any_valid, valid)
    per_source = np.stack([
        (pm.data < im.data).astype(np.float64)
        for pm, im in zip(reproj_maps, ident_maps)])
    auto = (ident.data > reproj.data).astype(np.float64) if use_automask else np.ones((h, w))
    mask = auto * any_valid
    count = max(mask.sum(), 1.0)
    loss = ad.div(ad.sum(ad.mul(reproj, ad.constant(mask))), count)
    return loss, mask, per_source


def _spatial_diff(x, axis):
    if axis == 2:
        return ad.sub(x[:, :, 1:], x[:, :, :-1])
    return ad.sub(x[:, 1:, :], x[:, :-1, :])


def smooth_edge_aware(field, guide, normalize_field=False):
    """Mean squared forward-difference gradient of `field`, attenuated by
    exp(-|gradient of guide|); summed over x/y directions and channels."""
    if field.shape[1:] != guide.shape[1:]:
        raise ad.ShapeError("smooth_edge_aware: field %s vs guide %s"
                            % (field.shape, guide.shape))
    if normalize_field:
        field = ad.div(field, ad.mean(field))
    total = None
    c = field.shape[0]
    for axis in (2, 1):
        if field.shape[axis] < 2:  # no stencil in this direction
            continue
        df = _spatial_diff(field, axis)
        dg = ad.mean(ad.abs(_spatial_diff(guide, axis)), axes=(0,))
        atten = ad.exp(ad.mul(dg, -1.0))
        atten_c = ad.stack([atten] * c, axis=0) if c > 1 else ad.reshape(atten, (1,) + atten.shape)
        term = ad.mean(ad.sum(ad.mul(ad.mul(df, atten_c), ad.mul(df, atten_c)), axes=(0,)))
        total = term if total is None else ad.add(total, term)
    return total


def sparsity(motion, scales=None):
    """Concave group penalty: zero at zero, preferring concentrated fields.

    Per channel, with the detached spatial mean of |T| as the scale, the
    penalty is mean(2 m (sqrt(1 + |T|/m) - 1)); it is exactly 1-homogeneous
    in the field because the scale is recomputed from it.  `scales` pins the
    per-channel scale externally, which the gradient verification uses to
    hold the detached quantity fixed.
    """
    values = motion.values if isinstance(motion, geo.MotionField) else motion
    total = None
    for c in range(values.shape[0]):
        channel = ad.abs(values[c:c + 1, :, :])
        mbar = float(np.mean(channel.data)) if scales is None else float(scales[c])
        if mbar == 0.0:
            continue
        inner = ad.sqrt(ad.add(ad.div(channel, mbar), 1.0))
        term = ad.mean(ad.mul(ad.sub(inner, 1.0), 2.0 * mbar))
        total = term if total is None else ad.add(total, term)
    return total if total is not None else ad.constant(0.0)


def total_loss(target, source_imgs, depths, poses, motions, intr,
               weights=LossWeights(), use_automask=True, sparsity_scales=None):
    """Assemble the weighted objective for one sample.

    depths: list of DepthMaps at any power-of-two fractions of the target
    resolution (all are upsampled to full resolution; the per-scale
    photometric and depth-smoothness terms are averaged over the list).
    poses / motions: one entry per source (motions entries may be None).
    sparsity_scales: optional per-source channel scales pinning the detached
    sparsity normalization (gradient-verification support).
    """
    _, h, w = target.shape
    n_scales = len(depths)
    photo_terms = []
    depth_smooth_terms = []
    auto_mask = None
    per_source_masks = None
    full_depth = None
    for si, depth in enumerate(depths):
        d = depth.values if isinstance(depth, geo.DepthMap) else depth
        factor = h // d.shape[1]
        if factor > 1:
            d = ad.upsample_bilinear(d, factor)
        if full_depth is None:
            full_depth = d
        warped_list, validities = [], []
        for source, pose, motion in zip(source_imgs, poses, motions):
            warped, valid = geo.synthesize_view(source, d, pose, intr, motion=motion)
            warped_list.append(warped)
            validities.append(valid)
        lp, mask, per_source = min_reprojection(
            target, warped_list, validities, source_imgs,
            alpha=weights.alpha, use_automask=use_automask)
        photo_terms.append(lp)
        if si == 0:
            auto_mask, per_source_masks = mask, per_source
        depth_smooth_terms.append(smooth_edge_aware(d, target, normalize_field=True))

    photo = _average(photo_terms)
    depth_smooth = _average(depth_smooth_terms)

    motion_fields = [m for m in motions if m is not None]
    if motion_fields:
        guide = full_depth
        motion_smooth = _average([
            smooth_edge_aware(m.values if isinstance(m, geo.MotionField) else m, guide)
            for m in motion_fields])
        if sparsity_scales is None:
            sparsity_scales = [None] * len(motion_fields)
        sparse = _average([sparsity(m, scales=s)
                           for m, s in zip(motion_fields, sparsity_scales)])
    else:
        motion_smooth = ad.constant(0.0)
        sparse = ad.constant(0.0)

    total = ad.add(
        ad.add(ad.mul(photo, weights.photo), ad.mul(motion_smooth, weights.motion_smooth)),
        ad.add(ad.mul(depth_smooth, weights.depth_smooth), ad.mul(sparse, weights.sparsity)))
    return LossBreakdown(total=total, photo=photo, motion_smooth=motion_smooth,
                         depth_smooth=depth_smooth, sparsity=sparse,
                         auto_mask=auto_mask, per_source_masks=per_source_masks)


def _average(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.div(acc, float(len(terms))) if len(terms) > 1 else acc
