"""Small trainable networks: feature pyramid encoder, coarse and multi-scale
depth decoders, and the shared motion encoder with pose and motion-field
heads.

Everything is built from 3x3 convolutions on the autodiff tape.  The image
encoder and the motion encoder have the same topology (different input
channels); the pose head and the motion-field decoder both consume the
motion encoder's features, which enforces the shared-encoder structure.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import attention as attn
from . import autodiff as ad
from . import geometry as geo
from .autodiff import Array


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple = (16, 32, 64, 128)
    d_min: float = 1.0
    d_max: float = 40.0
    heads: int = 8
    points: int = 4
    attn_scale: int = 3        # attention at 1/8 resolution
    pose_scale: float = 0.01
    motion_scale: float = 0.01

    @property
    def feat_dim(self):
        return self.channels[-1]


@dataclass
class FeaturePyramid:
    levels: list  # k-th entry: C_k x H/2^k x W/2^k


def _layer_specs(cfg):
    """(name, shape, init) for every parameter, in a fixed order."""
    c0, c1, c2, c3 = cfg.channels
    specs = []

    def conv(name, cout, cin):
        specs.append((name + ".w", (cout, cin, 3, 3), "fanin"))
        specs.append((name + ".b", (cout,), "fanin"))

    for prefix, cin in (("enc", 3), ("moenc", 6)):
        conv(prefix + ".s0a", c0, cin)
        conv(prefix + ".s0b", c0, c0)
        conv(prefix + ".s1a", c1, c0)
        conv(prefix + ".s1b", c1, c1)
        conv(prefix + ".s2a", c2, c1)
        conv(prefix + ".s2b", c2, c2)
        conv(prefix + ".s3a", c3, c2)

    conv("coarse.c1", c1, c3)
    conv("coarse.c2", 1, c1)

    conv("dec.up2", c2, c3 + c2)
    conv("dec.up1", c1, c2 + c1)
    conv("dec.up0", c0, c1 + c0)
    conv("dec.disp3", 1, c3)
    conv("dec.disp2", 1, c2)
    conv("dec.disp1", 1, c1)
    conv("dec.disp0", 1, c0)

    conv("modec.up2", c2, c3 + c2)
    conv("modec.up1", c1, c2 + c1)
    conv("modec.up0", c0, c1 + c0)
    conv("modec.out", 3, c0)

    specs.append(("pose.fc.w", (6, c3), "fanin"))
    specs.append(("pose.fc.b", (6,), "fanin"))

    mk = cfg.heads * cfg.points
    for which in ("cross", "self"):
        specs.append(("attn.%s.val.w" % which, (c3, c3), "fanin"))
        specs.append(("attn.%s.out.w" % which, (c3, c3), "fanin"))
        specs.append(("attn.%s.off.w" % which, (mk * 2, c3), "zero"))
        specs.append(("attn.%s.off.b" % which, (mk * 2,), "zero"))
        specs.append(("attn.%s.wt.w" % which, (mk, c3), "zero"))
        specs.append(("attn.%s.wt.b" % which, (mk,), "zero"))
    specs.append(("attn.fuse.w", (c3, 2 * c3), "fuse_avg"))
    return specs


class NetworkWeights:
    """Named parameter Arrays plus the seed they were drawn from."""

    def __init__(self, params, seed, config):
        self.params = params
        self.seed = seed
        self.config = config

    def __getitem__(self, name):
        return self.params[name]

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def names(self):
        return list(self.params.keys())

    def replace(self, updates):
        """New weights with some parameters swapped (used by the optimizer)."""
        params = dict(self.params)
        params.update(updates)
        return NetworkWeights(params, self.seed, self.config)


def init_weights(cfg, seed):
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, kind in _layer_specs(cfg):
        if kind == "zero":
            data = np.zeros(shape)
        elif kind == "fuse_avg":
            c = shape[0]
            n_views = shape[1] // c
            data = np.concatenate([np.eye(c) / n_views] * n_views, axis=1)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            a = np.sqrt(1.0 / fan_in)
            data = rng.uniform(-a, a, shape)
        params[name] = Array(data, requires_grad=True)
    return NetworkWeights(params, seed, cfg)


def _conv_block(weights, name, x, stride=1, activate=True):
    out = ad.conv2d(x, weights[name + ".w"], weights[name + ".b"], stride=stride, padding=1)
    return ad.relu(out) if activate else out


def encode(weights, image, prefix="enc"):
    """4-level feature pyramid; spatial extent halves per level."""
    _, h, w = image.shape
    if h % 8 or w % 8:
        raise ad.ShapeError("encode: spatial dims %s not divisible by 8" % ((h, w),))
    x = _conv_block(weights, prefix + ".s0a", image)
    x = _conv_block(weights, prefix + ".s0b", x)
    l0 = x
    x = _conv_block(weights, prefix + ".s1a", l0, stride=2)
    x = _conv_block(weights, prefix + ".s1b", x)
    l1 = x
    x = _conv_block(weights, prefix + ".s2a", l1, stride=2)
    x = _conv_block(weights, prefix + ".s2b", x)
    l2 = x
    l3 = _conv_block(weights, prefix + ".s3a", l2, stride=2)
    return FeaturePyramid(levels=[l0, l1, l2, l3])


def _to_depth(logits, cfg):
    """Sigmoid-bounded inverse-depth parameterization."""
    x = ad.sigmoid(logits)
    inv_span = 1.0 / cfg.d_min - 1.0 / cfg.d_max
    inv = ad.add(ad.mul(x, inv_span), 1.0 / cfg.d_max)
    return geo.DepthMap(ad.div(1.0, inv), cfg.d_min, cfg.d_max)


def coarse_depth(weights, pyramid, cfg):
    """Auxiliary single-scale depth at 1/8 resolution, used to seed queries."""
    x = _conv_block(weights, "coarse.c1", pyramid.levels[3])
    logits = _conv_block(weights, "coarse.c2", x, activate=False)
    return _to_depth(logits, cfg)


def decode_depth(weights, refined_feat, pyramid, cfg):
    """Depth at scales 1, 1/2, 1/4, 1/8 with encoder skip connections."""
    d3 = _to_depth(_conv_block(weights, "dec.disp3", refined_feat, activate=False), cfg)
    x = ad.upsample_bilinear(refined_feat, 2)
    x = _conv_block(weights, "dec.up2", ad.concat([x, pyramid.levels[2]], axis=0))
    d2 = _to_depth(_conv_block(weights, "dec.disp2", x, activate=False), cfg)
    x = ad.upsample_bilinear(x, 2)
    x = _conv_block(weights, "dec.up1", ad.concat([x, pyramid.levels[1]], axis=0))
    d1 = _to_depth(_conv_block(weights, "dec.disp1", x, activate=False), cfg)
    x = ad.upsample_bilinear(x, 2)
    x = _conv_block(weights, "dec.up0", ad.concat([x, pyramid.levels[0]], axis=0))
    d0 = _to_depth(_conv_block(weights, "dec.disp0", x, activate=False), cfg)
    return [d0, d1, d2, d3]


def pose_head(weights, image_pair, cfg):
    """Axis-angle + translation from a channel-concatenated frame pair."""
    if image_pair.shape[0] != 6:
        raise ad.ShapeError("pose_head: expected 6 x H x W input, got %s" % (image_pair.shape,))
    pyramid = encode(weights, image_pair, prefix="moenc")
    pooled = ad.mean(pyramid.levels[3], axes=(1, 2))
    out = ad.add(ad.matmul(weights["pose.fc.w"], ad.reshape(pooled, (cfg.feat_dim, 1))),
                 ad.reshape(weights["pose.fc.b"], (6, 1)))
    out = ad.mul(ad.reshape(out, (6,)), cfg.pose_scale)
    return geo.pose_from_axis_angle(out[0:3], out[3:6])


def motion_head(weights, image_pair, cfg):
    """Full-resolution 3 x H x W residual translation field."""
    if image_pair.shape[0] != 6:
        raise ad.ShapeError("motion_head: expected 6 x H x W input, got %s" % (image_pair.shape,))
    pyramid = encode(weights, image_pair, prefix="moenc")
    x = ad.upsample_bilinear(pyramid.levels[3], 2)
    x = _conv_block(weights, "modec.up2", ad.concat([x, pyramid.levels[2]], axis=0))
    x = ad.upsample_bilinear(x, 2)
    x = _conv_block(weights, "modec.up1", ad.concat([x, pyramid.levels[1]], axis=0))
    x = ad.upsample_bilinear(x, 2)
    x = _conv_block(weights, "modec.up0", ad.concat([x, pyramid.levels[0]], axis=0))
    out = _conv_block(weights, "modec.out", x, activate=False)
    return geo.MotionField(ad.mul(out, cfg.motion_scale))


def attn_params(weights, which, cfg, points=None):
    """DeformAttnParams assembled from the named weight entries."""
    params = attn.DeformAttnParams(
        heads=cfg.heads, points=cfg.points, dim=cfg.feat_dim,
        value_proj=weights["attn.%s.val.w" % which],
        out_proj=weights["attn.%s.out.w" % which],
        offset_w=weights["attn.%s.off.w" % which],
        offset_b=weights["attn.%s.off.b" % which],
        weight_w=weights["attn.%s.wt.w" % which],
        weight_b=weights["attn.%s.wt.b" % which],
    )
    if points is not None and points != cfg.points:
        params = attn.truncated(params, points)
    return params


# ---------------------------------------------------------------------------
# checkpoint container: text header, then raw little-endian float64 blobs

_MAGIC = "depthmotion-checkpoint 1"


def config_fingerprint(text):
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(path, weights, config_hash, extra=None):
    lines = [_MAGIC, "seed %d" % weights.seed, "confighash %s" % config_hash]
    for key, value in (extra or {}).items():
        lines.append("meta %s %s" % (key, value))
    names = weights.names()
    lines.append("params %d" % len(names))
    for name in names:
        shape = weights[name].shape
        lines.append("%s %d %s" % (name, len(shape), " ".join(str(s) for s in shape)))
    lines.append("data")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode())
        for name in names:
            f.write(weights[name].data.astype("<f8").tobytes())


def load_checkpoint(path, cfg=None):
    with open(path, "rb") as f:
        header = []
        while True:
            line = f.readline().decode().rstrip("\n")
            header.append(line)
            if line == "data":
                break
        if header[0] != _MAGIC:
            raise ValueError("not a checkpoint file: %r" % header[0])
        seed = int(header[1].split()[1])
        config_hash = header[2].split()[1]
        extra = {}
        idx = 3
        while header[idx].startswith("meta "):
            _, key, value = header[idx].split(" ", 2)
            extra[key] = value
            idx += 1
        n_params = int(header[idx].split()[1])
        params = {}
        for line in header[idx + 1:idx + 1 + n_params]:
            toks = line.split()
            name = toks[0]
            ndim = int(toks[1])
            shape = tuple(int(t) for t in toks[2:2 + ndim])
            count = int(np.prod(shape)) if shape else 1
            raw = np.frombuffer(f.read(count * 8), dtype="<f8")
            params[name] = Array(raw.reshape(shape), requires_grad=True)
    if cfg is None:
        cfg = ModelConfig()
    return NetworkWeights(params, seed, cfg), config_hash, extra
