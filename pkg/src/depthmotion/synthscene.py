"""Deterministic synthetic scenes with exact geometric ground truth.

Scenes are ray-cast: a couple of textured background planes plus textured
rectangles that translate with constant 3D velocity.  Every sample carries
the target frame, its two neighbours, exact depth, ego poses, per-pixel
object velocity (in the target camera frame) and object masks, which makes
the renderer the verification oracle for the warping and training stack.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .geometry import Intrinsics, PoseSE3

DEPTH_RANGE = (2.0, 20.0)


@dataclass(frozen=True)
class Texture:
    """Band-limited value noise: a sum of random plane waves per channel."""

    freqs: np.ndarray   # (n, 2) cycles per scene unit
    phases: np.ndarray  # (n, 3)
    amps: np.ndarray    # (n, 3)

    @staticmethod
    def make(rng, freq_lo, freq_hi, n_waves=5, contrast=(0.3, 0.45)):
        angle = rng.uniform(0.0, 2.0 * np.pi, n_waves)
        mag = rng.uniform(freq_lo, freq_hi, n_waves)
        freqs = np.stack([mag * np.cos(angle), mag * np.sin(angle)], axis=1)
        phases = rng.uniform(0.0, 2.0 * np.pi, (n_waves, 3))
        amps = rng.uniform(0.5, 1.0, (n_waves, 3))
        amps *= rng.uniform(*contrast, 3) / amps.sum(axis=0)
        return Texture(freqs, phases, amps)

    def eval(self, u, v):
        """Colors (3, N) at local surface coordinates u, v (each (N,))."""
        phase = 2.0 * np.pi * (np.outer(self.freqs[:, 0], u) + np.outer(self.freqs[:, 1], v))
        waves = np.sin(phase[:, None, :] + self.phases[:, :, None])  # (n, 3, N)
        out = 0.5 + np.einsum("nc,nck->ck", self.amps, waves)
        return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class Plane:
    """Infinite textured plane n . X = offset (world frame)."""

    normal: np.ndarray
    offset: float
    texture: Texture

    def basis(self):
        n = self.normal / np.linalg.norm(self.normal)
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        b1 = np.cross(n, helper)
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(n, b1)
        return b1, b2


@dataclass(frozen=True)
class Rect:
    """Textured rectangle: center + two half-axes, moving at constant velocity."""

    center: np.ndarray      # world position at the target frame
    axis_u: np.ndarray      # unit vector, in-plane
    axis_v: np.ndarray
    half_u: float
    half_v: float
    velocity: np.ndarray    # world units per frame step
    texture: Texture

    def center_at(self, frame_offset):
        return self.center + self.velocity * frame_offset


@dataclass(frozen=True)
class SceneConfig:
    height: int
    width: int
    intrinsics: Intrinsics
    planes: list
    objects: list
    ego_rotvec: np.ndarray      # camera rotation per frame step (axis-angle)
    ego_step: np.ndarray        # camera translation per frame step (world)
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.height % 8 or self.width % 8:
            raise ValueError("image dims must be divisible by 8")

    def ego_pose_world(self, frame_offset):
        """Camera-to-world pose at target + frame_offset."""
        r = _rodrigues(self.ego_rotvec * frame_offset)
        t = self.ego_step * frame_offset
        return r, t


@dataclass
class SceneSample:
    """Frame triple around a target frame with exact ground truth."""

    frames: dict                 # offset (-1, 0, +1) -> 3 x H x W image
    gt_depth: np.ndarray         # 1 x H x W, target frame
    gt_poses: dict               # offset (-1, +1) -> PoseSE3, target -> source
    gt_velocity: np.ndarray      # 3 x H x W object velocity, target camera frame
    gt_masks: np.ndarray         # n_objects x H x W bool, target frame
    intrinsics: Intrinsics
    scene_id: int = 0
    dynamic: bool = False

    @property
    def object_mask(self):
        if self.gt_masks.shape[0] == 0:
            return np.zeros(self.gt_depth.shape[1:], dtype=bool)
        return self.gt_masks.any(axis=0)

    def gt_residual(self, offset):
        """Exact per-pixel residual translation for warping target -> source."""
        pose = self.gt_poses[offset]
        h, w = self.gt_depth.shape[1:]
        flat = self.gt_velocity.reshape(3, -1)
        res = offset * (pose.rotation.data @ flat)
        return res.reshape(3, h, w)


def _rodrigues(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * (kx @ kx)


def render(config, frame_index):
    """Ray-cast one frame; frame_index in {0, 1, 2} maps to offsets {-1, 0, +1}.

    Returns (image 3xHxW, depth 1xHxW, masks n_objects x H x W).  Raises if
    any ray misses every surface (the config invariant is violated).
    """
    offset = frame_index - 1
    h, w = config.height, config.width
    intr = config.intrinsics
    r_cw, t_cw = config.ego_pose_world(offset)

    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([(xs.ravel() - intr.cx) / intr.fx,
                         (ys.ravel() - intr.cy) / intr.fy,
                         np.ones(h * w)])
    dirs = r_cw @ dirs_cam
    origin = t_cw[:, None]

    n_pix = h * w
    best_depth = np.full(n_pix, np.inf)
    best_surface = np.full(n_pix, -1, dtype=np.int64)
    hit_uv = np.zeros((2, n_pix))

    surfaces = []
    for plane in config.planes:
        n = plane.normal
        denom = n @ dirs
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (plane.offset - n @ origin) / denom
        lam = np.where((np.abs(denom) > 1e-12) & (lam > 0), lam, np.inf)
        surfaces.append((plane, lam, None))
    for obj in config.objects:
        center = obj.center_at(offset)
        n = np.cross(obj.axis_u, obj.axis_v)
        denom = n @ dirs
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (n @ center - n @ origin) / denom
        pts = origin + lam * dirs
        lu = obj.axis_u @ (pts - center[:, None])
        lv = obj.axis_v @ (pts - center[:, None])
        inside = (np.abs(lu) <= obj.half_u) & (np.abs(lv) <= obj.half_v)
        lam = np.where((np.abs(denom) > 1e-12) & (lam > 0) & inside, lam, np.inf)
        surfaces.append((obj, lam, (lu, lv)))

    for idx, (_, lam, _) in enumerate(surfaces):
        closer = lam < best_depth
        best_depth = np.where(closer, lam, best_depth)
        best_surface = np.where(closer, idx, best_surface)

    if not np.isfinite(best_depth).all():
        raise ValueError("some rays miss every surface; scene config is invalid")

    image = np.zeros((3, n_pix))
    for idx, (surf, _, local) in enumerate(surfaces):
        sel = best_surface == idx
        if not sel.any():
            continue
        pts = origin + best_depth[sel] * dirs[:, sel]
        if isinstance(surf, Plane):
            b1, b2 = surf.basis()
            image[:, sel] = surf.texture.eval(b1 @ pts, b2 @ pts)
        else:
            lu, lv = local
            image[:, sel] = surf.texture.eval(lu[sel], lv[sel])

    if config.noise_level > 0:
        rng = np.random.default_rng((config.seed, 7919, frame_index))
        image = np.clip(image + rng.normal(0.0, config.noise_level, image.shape), 0.0, 1.0)

    n_planes = len(config.planes)
    masks = np.stack([best_surface == n_planes + i for i in range(len(config.objects))]) \
        if config.objects else np.zeros((0, h, w), dtype=bool)
    return (image.reshape(3, h, w),
            best_depth.reshape(1, h, w).copy(),
            masks.reshape(-1, h, w))


def make_sample(config, scene_id=0):
    """Render the frame triple and assemble exact ground truth."""
    frames = {}
    depth = None
    masks = None
    for frame_index in range(3):
        img, d, m = render(config, frame_index)
        offset = frame_index - 1
        frames[offset] = img
        if offset == 0:
            depth, masks = d, m

    r_t, t_t = config.ego_pose_world(0)
    poses = {}
    for offset in (-1, 1):
        r_s, t_s = config.ego_pose_world(offset)
        poses[offset] = PoseSE3(r_s.T @ r_t, r_s.T @ (t_t - t_s))

    velocity = np.zeros_like(depth).repeat(3, axis=0)
    for i, obj in enumerate(config.objects):
        v_cam = r_t.T @ obj.velocity
        velocity[:, masks[i]] = v_cam[:, None]

    dynamic = any(np.linalg.norm(o.velocity) > 0 for o in config.objects)
    return SceneSample(frames=frames, gt_depth=depth, gt_poses=poses,
                       gt_velocity=velocity, gt_masks=masks,
                       intrinsics=config.intrinsics, scene_id=scene_id,
                       dynamic=dynamic)


def random_config(seed, height=64, width=64, dynamic=False):
    """A randomized wall+floor scene with 1-3 rectangles, depths in [2, 20]."""
    rng = np.random.default_rng(seed)
    intr = Intrinsics(fx=0.875 * width, fy=0.875 * width,
                      cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)

    wall_z = rng.uniform(12.0, 16.0)
    wall_n = np.array([rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12), 1.0])
    wall = Plane(wall_n, wall_z, Texture.make(rng, 0.02, 0.16))

    floor_h = rng.uniform(1.8, 3.0)
    floor_slope = rng.uniform(0.05, 0.12)
    # camera-down y grows along +y; plane passes below the camera path
    floor = Plane(np.array([0.0, 1.0, -floor_slope]), floor_h,
                  Texture.make(rng, 0.05, 0.3))

    objects = []
    for _ in range(rng.integers(1, 4)):
        z = rng.uniform(3.0, 9.0)
        u = rng.uniform(0.25 * width, 0.75 * width)
        v = rng.uniform(0.25 * height, 0.65 * height)
        center = np.array([(u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z])
        frac = rng.uniform(0.04, 0.12)
        area_world = frac * height * width * z * z / (intr.fx * intr.fy)
        aspect = rng.uniform(0.6, 1.6)
        half_u = 0.5 * np.sqrt(area_world * aspect)
        half_v = 0.5 * np.sqrt(area_world / aspect)
        roll = rng.uniform(0.0, np.pi)
        axis_u = np.array([np.cos(roll), np.sin(roll), 0.0])
        axis_v = np.array([-np.sin(roll), np.cos(roll), 0.0])
        if dynamic:
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            velocity = direction * rng.uniform(0.05, 0.3)
        else:
            velocity = np.zeros(3)
        objects.append(Rect(center, axis_u, axis_v, half_u, half_v, velocity,
                            Texture.make(rng, 0.15, 0.9)))

    ego_dir = rng.normal(size=3)
    ego_dir /= np.linalg.norm(ego_dir)
    ego_step = ego_dir * rng.uniform(0.05, 0.2)
    rot_axis = rng.normal(size=3)
    rot_axis /= np.linalg.norm(rot_axis)
    ego_rotvec = rot_axis * rng.uniform(0.0, 0.015)

    return SceneConfig(height=height, width=width, intrinsics=intr,
                       planes=[wall, floor], objects=objects,
                       ego_rotvec=ego_rotvec, ego_step=ego_step,
                       seed=int(seed) if np.isscalar(seed) else 0)


@dataclass
class Benchmark:
    train: list
    eval_static: list
    eval_dynamic: list

    @property
    def eval_all(self):
        return self.eval_static + self.eval_dynamic


def generate_benchmark(seed, n_train=200, n_eval_static=20, n_eval_dynamic=20,
                       height=64, width=64):
    """The fixed training / evaluation scene sets; deterministic in seed."""
    root = np.random.SeedSequence(seed)
    train_seeds, stat_seeds, dyn_seeds = root.spawn(3)

    def build(seqs, dynamic_flags, base):
        out = []
        for i, (s, dyn) in enumerate(zip(seqs, dynamic_flags)):
            cfg = random_config(s, height=height, width=width, dynamic=dyn)
            out.append(make_sample(cfg, scene_id=base + i))
        return out

    train_flags = [i % 2 == 1 for i in range(n_train)]
    train = build(train_seeds.spawn(n_train), train_flags, 0)
    eval_static = build(stat_seeds.spawn(n_eval_static), [False] * n_eval_static, 10_000)
    eval_dynamic = build(dyn_seeds.spawn(n_eval_dynamic), [True] * n_eval_dynamic, 20_000)
    return Benchmark(train, eval_static, eval_dynamic)


# ---------------------------------------------------------------------------
# disk export / import

def export_scene(sample, scene_dir):
    os.makedirs(scene_dir, exist_ok=True)
    names = {-1: "frame_prev.pfm", 0: "frame_target.pfm", 1: "frame_next.pfm"}
    for offset, name in names.items():
        fileio.write_pfm(os.path.join(scene_dir, name), sample.frames[offset])
    fileio.write_pfm(os.path.join(scene_dir, "depth.pfm"), sample.gt_depth[0])
    fileio.write_pfm(os.path.join(scene_dir, "velocity.pfm"), sample.gt_velocity)
    mask_ids = np.zeros(sample.gt_depth.shape[1:], dtype=np.uint8)
    for i in range(sample.gt_masks.shape[0]):
        mask_ids[sample.gt_masks[i]] = i + 1
    fileio.write_pgm(os.path.join(scene_dir, "masks.pgm"), mask_ids)

    intr = sample.intrinsics
    lines = [
        "scene_id %d" % sample.scene_id,
        "dynamic %d" % int(sample.dynamic),
        "n_objects %d" % sample.gt_masks.shape[0],
        "intrinsics %s" % fileio.format_floats([intr.fx, intr.fy, intr.cx, intr.cy]),
        "files frame_prev.pfm frame_target.pfm frame_next.pfm depth.pfm velocity.pfm masks.pgm",
    ]
    for offset in (-1, 1):
        pose = sample.gt_poses[offset]
        lines.append("pose %+d R %s" % (offset, fileio.format_floats(pose.rotation.data)))
        lines.append("pose %+d t %s" % (offset, fileio.format_floats(pose.translation.data)))
    with open(os.path.join(scene_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_scene(scene_dir):
    entries = {}
    poses = {}
    with open(os.path.join(scene_dir, "manifest.txt")) as f:
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "pose":
                offset = int(tok[1])
                poses.setdefault(offset, {})[tok[2]] = np.array([float(x) for x in tok[3:]])
            else:
                entries[tok[0]] = tok[1:]
    fx, fy, cx, cy = (float(x) for x in entries["intrinsics"])
    n_objects = int(entries["n_objects"][0])

    frames = {
        -1: fileio.read_pfm(os.path.join(scene_dir, "frame_prev.pfm")),
        0: fileio.read_pfm(os.path.join(scene_dir, "frame_target.pfm")),
        1: fileio.read_pfm(os.path.join(scene_dir, "frame_next.pfm")),
    }
    depth = fileio.read_pfm(os.path.join(scene_dir, "depth.pfm"))[None]
    velocity = fileio.read_pfm(os.path.join(scene_dir, "velocity.pfm"))
    mask_ids = fileio.read_pgm(os.path.join(scene_dir, "masks.pgm"))
    masks = np.stack([mask_ids == i + 1 for i in range(n_objects)]) \
        if n_objects else np.zeros((0,) + mask_ids.shape, dtype=bool)

    gt_poses = {off: PoseSE3(p["R"].reshape(3, 3), p["t"]) for off, p in poses.items()}
    return SceneSample(frames=frames, gt_depth=depth, gt_poses=gt_poses,
                       gt_velocity=velocity, gt_masks=masks,
                       intrinsics=Intrinsics(fx, fy, cx, cy),
                       scene_id=int(entries["scene_id"][0]),
                       dynamic=bool(int(entries["dynamic"][0])))


def export_benchmark(benchmark, out_dir):
    groups = [("train", benchmark.train), ("eval_static", benchmark.eval_static),
              ("eval_dynamic", benchmark.eval_dynamic)]
    os.makedirs(out_dir, exist_ok=True)
    index = []
    for split, samples in groups:
        for i, sample in enumerate(samples):
            rel = os.path.join(split, "scene_%04d" % i)
            export_scene(sample, os.path.join(out_dir, rel))
            index.append("%s %s" % (split, rel))
    with open(os.path.join(out_dir, "index.txt"), "w") as f:
        f.write("\n".join(index) + "\n")


def load_benchmark(out_dir):
    splits = {"train": [], "eval_static": [], "eval_dynamic": []}
    with open(os.path.join(out_dir, "index.txt")) as f:
        for line in f:
            tok = line.split()
            if tok:
                splits[tok[0]].append(load_scene(os.path.join(out_dir, tok[1])))
    return Benchmark(splits["train"], splits["eval_static"], splits["eval_dynamic"])
