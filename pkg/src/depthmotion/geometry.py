"""Pinhole projection, rigid transforms and differentiable view synthesis.

Conventions: integer pixel coordinates address pixel centers, origin at the
top-left; x runs along columns, y along rows.  Camera frame is right-handed
with z along the optical axis; a point is in front of the camera when its
camera-frame z exceeds Z_MIN.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Array

# behind-camera threshold, scene units
Z_MIN = 1e-3


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def scaled(self, factor):
        """Intrinsics for a resolution scaled by `factor` (e.g. 1/8)."""
        return Intrinsics(self.fx * factor, self.fy * factor,
                          self.cx * factor, self.cy * factor)

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


class PoseSE3:
    """Rigid transform: rotation (3x3 Array) and translation (3 Array).

    Components stay Arrays so that transforms built from network outputs
    remain differentiable w.r.t. their parameters.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation, check=True):
        rotation = rotation if isinstance(rotation, Array) else Array(rotation)
        translation = translation if isinstance(translation, Array) else Array(translation)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and a 3-vector translation")
        if check:
            r = rotation.data
            if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
                raise ValueError("rotation is not orthonormal")
            if abs(np.linalg.det(r) - 1.0) > 1e-9:
                raise ValueError("rotation determinant is not +1")
        self.rotation = rotation
        self.translation = translation

    @staticmethod
    def identity():
        return PoseSE3(np.eye(3), np.zeros(3))

    def inverse(self):
        r = self.rotation.data
        t = self.translation.data
        return PoseSE3(r.T, -(r.T @ t))

    def compose(self, other):
        """self after other: x -> self(other(x))."""
        r = self.rotation.data @ other.rotation.data
        t = self.rotation.data @ other.translation.data + self.translation.data
        return PoseSE3(r, t)

    def apply(self, points):
        """Transform a 3xN array of points (plain numpy, no gradients)."""
        return self.rotation.data @ points + self.translation.data[:, None]


class DepthMap:
    """Strictly positive 1 x H x W depth values within configured bounds."""

    __slots__ = ("values", "d_min", "d_max")

    def __init__(self, values, d_min, d_max):
        values = values if isinstance(values, Array) else Array(values)
        if values.ndim != 3 or values.shape[0] != 1:
            raise ValueError("depth map must be 1 x H x W, got %s" % (values.shape,))
        lo, hi = values.data.min(), values.data.max()
        if lo < d_min - 1e-9 or hi > d_max + 1e-9:
            raise ValueError("depth values [%g, %g] violate bounds [%g, %g]"
                             % (lo, hi, d_min, d_max))
        self.values = values
        self.d_min = d_min
        self.d_max = d_max

    @property
    def shape(self):
        return self.values.shape


class MotionField:
    """Per-pixel 3D translation (3 x H x W), no rotation component."""

    __slots__ = ("values",)

    def __init__(self, values):
        values = values if isinstance(values, Array) else Array(values)
        if values.ndim != 3 or values.shape[0] != 3:
            raise ValueError("motion field must be 3 x H x W, got %s" % (values.shape,))
        self.values = values

    @property
    def shape(self):
        return self.values.shape


def _values(x):
    return x.values if isinstance(x, (DepthMap, MotionField)) else x


def rotation_from_axis_angle(w):
    """Rodrigues' formula as a differentiable graph over the 3-vector w."""
    if w.shape != (3,):
        raise ValueError("axis-angle must be a 3-vector")
    theta_sq = ad.sum(ad.mul(w, w))
    # skew(w) and skew(w)^2 assembled from components
    wx, wy, wz = w[0:1], w[1:2], w[2:3]
    zero = ad.constant([0.0])
    k_rows = [
        ad.concat([zero, -wz, wy]),
        ad.concat([wz, zero, -wx]),
        ad.concat([-wy, wx, zero]),
    ]
    k = ad.stack(k_rows, axis=0)
    k2 = ad.matmul(k, k)
    if theta_sq.item() < 1e-12:
        # series: sin(t)/t = 1 - t^2/6, (1-cos t)/t^2 = 1/2 - t^2/24
        a = ad.sub(1.0, ad.div(theta_sq, 6.0))
        b = ad.sub(0.5, ad.div(theta_sq, 24.0))
    else:
        theta = ad.sqrt(theta_sq)
        a = ad.div(ad.sin(theta), theta)
        b = ad.div(ad.sub(1.0, ad.cos(theta)), theta_sq)
    eye = ad.constant(np.eye(3))
    a9 = _tile_scalar(a, (3, 3))
    b9 = _tile_scalar(b, (3, 3))
    return ad.add(eye, ad.add(ad.mul(a9, k), ad.mul(b9, k2)))


def pose_from_axis_angle(w, t, check=False):
    """Build a PoseSE3 from axis-angle w and translation t (both 3 Arrays)."""
    return PoseSE3(rotation_from_axis_angle(w), t, check=check)


def _tile_scalar(s, shape):
    """Tile a scalar Array to `shape` differentiably (ones @ s trick)."""
    n = int(np.prod(shape))
    col = ad.reshape(s, (1, 1))
    tiled = ad.matmul(ad.constant(np.ones((n, 1))), col)
    return ad.reshape(tiled, shape)


def pixel_grid(height, width):
    """Constant (2, H, W) array of pixel-center coordinates (x then y)."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    return ad.constant(np.stack([xs, ys]))


def backproject(coords, depth, intr):
    """Camera-frame points (3 x N) from pixel coords (2 x N) and depths (1 x N)."""
    x = ad.div(ad.sub(coords[0:1, :], intr.cx), intr.fx)
    y = ad.div(ad.sub(coords[1:2, :], intr.cy), intr.fy)
    ones = ad.constant(np.ones(x.shape))
    rays = ad.concat([x, y, ones], axis=0)
    depth3 = ad.concat([depth, depth, depth], axis=0)
    return ad.mul(rays, depth3)


def project(points, intr):
    """Pixel coords (2 x N) and the validity of camera points (3 x N).

    Points with z <= Z_MIN are flagged invalid; the division is guarded by
    clamping the denominator, which zeroes its gradient exactly where the
    point is already invalid.
    """
    z = points[2:3, :]
    valid = z.data[0] > Z_MIN
    z_safe = ad.clamp(z, lo=Z_MIN)
    u = ad.add(ad.div(ad.mul(points[0:1, :], intr.fx), z_safe), intr.cx)
    v = ad.add(ad.div(ad.mul(points[1:2, :], intr.fy), z_safe), intr.cy)
    return ad.concat([u, v], axis=0), valid


def warp_pixel(p_t, depth, pose, intr):
    """Map one target pixel into the source view.

    Returns ((u, v) floats, z_s float, valid bool).  Differentiable when
    called with Array inputs through warp_points; this scalar form is the
    reference entry point used by tests and reference-point seeding.
    """
    coords = ad.constant(np.array([[float(p_t[0])], [float(p_t[1])]]))
    d = depth if isinstance(depth, Array) else ad.constant([[float(depth)]])
    if d.item() <= 0:
        raise ValueError("depth must be positive")
    coords_s, z_s, valid = warp_points(coords, ad.reshape(d, (1, 1)), pose, intr)
    return (coords_s.data[0, 0], coords_s.data[1, 0]), z_s.data[0, 0], bool(valid[0])


def warp_points(coords, depth, pose, intr, motion=None):
    """Warp pixel coords (2 x N) with depths (1 x N) into the source camera.

    motion, when given, is a per-pixel 3 x N translation added to the pose
    translation.  Returns (source coords 2 x N, source depth 1 x N, valid).
    """
    n = coords.shape[1]
    cam = backproject(coords, depth, intr)
    rotated = ad.matmul(pose.rotation, cam)
    t_col = ad.reshape(pose.translation, (3, 1))
    t_tiled = ad.matmul(t_col, ad.constant(np.ones((1, n))))
    moved = ad.add(rotated, t_tiled)
    if motion is not None:
        moved = ad.add(moved, motion)
    coords_s, valid = project(moved, intr)
    z_s = moved[2:3, :]
    return coords_s, z_s, valid


def bilinear_sample(source, coords):
    """Sample source (C x H x W) at coords (2 x H' x W').

    Returns (values, validity) where validity marks coordinates that fall
    inside the source extent; out-of-bounds samples are zero.
    """
    _, h, w = source.shape
    sampled = ad.bilinear_gather(source, coords)
    x = coords.data[0]
    y = coords.data[1]
    # tolerance absorbs round-trip noise at the exact border
    eps = 1e-9
    validity = ((x >= -eps) & (x <= w - 1.0 + eps)
                & (y >= -eps) & (y <= h - 1.0 + eps)).astype(np.float64)
    return sampled, validity


def synthesize_view(source_img, depth, pose, intr, motion=None):
    """Differentiable reconstruction of the target frame from a source frame.

    source_img: C x H x W; depth: 1 x H x W positive; pose: target->source;
    motion: optional 3 x H x W per-pixel residual translation.  Returns
    (warped C x H x W, validity H x W in {0, 1}).
    """
    depth = _values(depth)
    motion = _values(motion) if motion is not None else None
    c, h, w = source_img.shape
    if depth.shape != (1, h, w):
        raise ValueError("depth shape %s does not match image %s" % (depth.shape, source_img.shape))
    grid = pixel_grid(h, w)
    coords = ad.reshape(grid, (2, h * w))
    d = ad.reshape(depth, (1, h * w))
    m = ad.reshape(motion, (3, h * w)) if motion is not None else None
    coords_s, _, in_front = warp_points(coords, d, pose, intr, motion=m)
    sampled, in_bounds = bilinear_sample(source_img, ad.reshape(coords_s, (2, h, w)))
    validity = in_bounds * in_front.reshape(h, w)
    return sampled, validity
