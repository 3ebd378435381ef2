"""Trainer and evaluator: the full pipeline composition, Adam with the
two-stage learning-rate schedule, pose freezing, gradient clipping,
deterministic batching, checkpointing and report emission."""

import os
from dataclasses import dataclass, fields

import numpy as np

from . import attention as attn
from . import autodiff as ad
from . import evaluation as evalm
from . import losses
from . import motion as mot
from . import networks as nets
from . import synthscene as sc


class TrainingAborted(RuntimeError):
    """Raised when a step produces a non-finite loss."""

    def __init__(self, step, breakdown):
        self.step = step
        self.breakdown = breakdown
        super().__init__("non-finite loss at step %d: %s" % (step, breakdown))


@dataclass
class TrainConfig:
    benchmark_dir: str = ""
    benchmark_seed: int = 2026
    n_train_scenes: int = 200
    n_eval_static: int = 20
    n_eval_dynamic: int = 20
    height: int = 64
    width: int = 64
    epochs: int = 25
    batch_size: int = 4
    learning_rate: float = 2e-4
    lr_drop_epoch: int = 15
    lr_drop_factor: float = 10.0
    pose_freeze_epoch: int = 15
    grad_clip: float = 10.0
    lambda_photo: float = 1.0
    lambda_motion_smooth: float = 0.01
    lambda_depth_smooth: float = 0.001
    lambda_sparsity: float = 0.01
    alpha: float = 0.85
    heads: int = 8
    points: int = 4
    train_iters: int = 2
    eval_iters: int = 6
    d_min: float = 1.0
    d_max: float = 40.0
    cross_attention: bool = True
    self_attention: bool = True
    motion_field: bool = True
    refinement: bool = True
    auto_mask: bool = True
    seed: int = 0

    def model_config(self):
        return nets.ModelConfig(d_min=self.d_min, d_max=self.d_max,
                                heads=self.heads, points=self.points)

    def loss_weights(self):
        return losses.LossWeights(photo=self.lambda_photo,
                                  motion_smooth=self.lambda_motion_smooth,
                                  depth_smooth=self.lambda_depth_smooth,
                                  sparsity=self.lambda_sparsity,
                                  alpha=self.alpha)

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append("%s = %s" % (f.name, value))
        return "\n".join(lines) + "\n"

    def fingerprint(self):
        return nets.config_fingerprint(self.to_text())


def parse_config(text):
    """key = value lines; unknown keys are rejected."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#")[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError("line %d: expected 'key = value', got %r" % (lineno, line))
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in known:
            raise ValueError("line %d: unknown config key %r" % (lineno, key))
        kind = known[key]
        if kind in ("bool", bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError("line %d: bad boolean %r" % (lineno, raw))
            values[key] = raw.lower() in ("true", "1")
        elif kind in ("int", int):
            values[key] = int(raw)
        elif kind in ("float", float):
            values[key] = float(raw)
        else:
            values[key] = raw
    return TrainConfig(**values)


def load_config(path):
    with open(path) as f:
        return parse_config(f.read())


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, weights, grads, lr, frozen=(), clip=None):
        """Apply one update; returns new NetworkWeights.  Frozen parameters
        are left untouched (bit-identical)."""
        frozen = set(frozen)
        live = {n: g for n, g in grads.items() if n not in frozen}
        if clip is not None and live:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in live.values()))
            if norm > clip:
                scale = clip / norm
                live = {n: g * scale for n, g in live.items()}
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        updates = {}
        for name, g in live.items():
            m = self.m.get(name, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(name, 0.0) * b2 + (1 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            delta = lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            updates[name] = ad.Array(weights[name].data - delta, requires_grad=True)
        return weights.replace(updates)


# ---------------------------------------------------------------------------
# pipeline composition

def infer_depth(weights, sample, cfg, tc, points=None):
    """Depth inference: encoder, coarse seed, cross/self attention, decoder.

    Returns (depth maps list, coarse DepthMap, poses per source,
    target pyramid).  Honors the cross/self attention ablation flags and an
    evaluation-time sample-point override.
    """
    target = ad.constant(sample.frames[0])
    sources = [ad.constant(sample.frames[-1]), ad.constant(sample.frames[1])]
    intr = sample.intrinsics
    pyr_t = nets.encode(weights, target)
    coarse = nets.coarse_depth(weights, pyr_t, cfg)
    poses = [mot.estimate_ego(weights, target, s, cfg) for s in sources]

    if tc.cross_attention:
        cross = nets.attn_params(weights, "cross", cfg, points=points)
        per_source = []
        for source, pose in zip(sources, poses):
            pyr_s = nets.encode(weights, source)
            refs = attn.compute_reference_points(coarse, pose, intr, cfg.attn_scale)
            per_source.append(attn.deformable_attend(
                pyr_t.levels[3], pyr_s.levels[3], refs, cross))
        enhanced = attn.fuse_views(per_source, weights["attn.fuse.w"])
    else:
        enhanced = pyr_t.levels[3]

    if tc.self_attention:
        refined = attn.self_refine(enhanced, nets.attn_params(weights, "self", cfg, points=points))
    else:
        refined = enhanced

    depths = nets.decode_depth(weights, refined, pyr_t, cfg)
    return depths, coarse, poses, pyr_t


def estimate_motions(weights, sample, depth, poses, cfg, tc, n_iter):
    """Residual motion per source, honoring motion/refinement flags."""
    target = ad.constant(sample.frames[0])
    sources = [ad.constant(sample.frames[-1]), ad.constant(sample.frames[1])]
    motions = []
    estimates = []
    for source, pose in zip(sources, poses):
        if tc.motion_field:
            iters = n_iter if tc.refinement else 1
            est = mot.refine_motion(weights, target, source, depth, pose,
                                    sample.intrinsics, cfg, iters)
            motions.append(est.residual)
            estimates.append(est)
        else:
            motions.append(None)
            estimates.append(None)
    return motions, estimates


def forward_sample(weights, sample, cfg, tc):
    """Full training forward pass for one sample; returns the loss breakdown."""
    target = ad.constant(sample.frames[0])
    sources = [ad.constant(sample.frames[-1]), ad.constant(sample.frames[1])]
    depths, coarse, poses, _ = infer_depth(weights, sample, cfg, tc)
    motions, _ = estimate_motions(weights, sample, depths[0], poses, cfg, tc,
                                  tc.train_iters)
    # the coarse auxiliary depth trains on the same objective as a 5th scale
    breakdown = losses.total_loss(target, sources, depths + [coarse], poses, motions,
                                  sample.intrinsics, tc.loss_weights(),
                                  use_automask=tc.auto_mask)
    return breakdown


def _load_benchmark(tc):
    if tc.benchmark_dir:
        return sc.load_benchmark(tc.benchmark_dir)
    return sc.generate_benchmark(tc.benchmark_seed, n_train=tc.n_train_scenes,
                                 n_eval_static=tc.n_eval_static,
                                 n_eval_dynamic=tc.n_eval_dynamic,
                                 height=tc.height, width=tc.width)


FROZEN_POSE = ("pose.fc.w", "pose.fc.b")


def train(tc, out_dir, benchmark=None, log_every=1):
    """Run the schedule; writes checkpoint.ckpt, config.txt and train_log.txt.

    Returns (weights, log lines).  Epochs map to one pass over the scene
    list; the learning rate drops once and the pose head freezes after the
    configured epochs.
    """
    os.makedirs(out_dir, exist_ok=True)
    benchmark = benchmark or _load_benchmark(tc)
    cfg = tc.model_config()
    weights = nets.init_weights(cfg, tc.seed)
    adam = Adam()
    fingerprint = tc.fingerprint()

    log = ["# epoch maps to one pass over %d synthetic scenes (desk-scale choice)"
           % len(benchmark.train),
           "# config fingerprint %s" % fingerprint]
    step = 0
    for epoch in range(tc.epochs):
        lr = tc.learning_rate if epoch < tc.lr_drop_epoch \
            else tc.learning_rate / tc.lr_drop_factor
        frozen = FROZEN_POSE if epoch >= tc.pose_freeze_epoch else ()
        order = np.random.default_rng((tc.seed, epoch)).permutation(len(benchmark.train))
        for start in range(0, len(order), tc.batch_size):
            batch = [benchmark.train[i] for i in order[start:start + tc.batch_size]]
            grads_sum = {}
            terms = {}
            try:
                for sample in batch:
                    with ad.Tape() as tape:
                        breakdown = forward_sample(weights, sample, cfg, tc)
                    grads = ad.backward(tape, breakdown.total)
                    for name in weights.names():
                        p = weights[name]
                        if p in grads:
                            g = grads[p].data
                            grads_sum[name] = grads_sum.get(name, 0.0) + g
                    for key, value in breakdown.values().items():
                        terms[key] = terms.get(key, 0.0) + value / len(batch)
            except ad.NonFiniteError as err:
                raise TrainingAborted(step, terms) from err
            if not np.isfinite(list(terms.values())).all():
                raise TrainingAborted(step, terms)
            grads_mean = {n: g / len(batch) for n, g in grads_sum.items()}
            weights = adam.step(weights, grads_mean, lr, frozen=frozen, clip=tc.grad_clip)
            if step % log_every == 0:
                log.append("step %d epoch %d " % (step, epoch)
                           + " ".join("%s %.10g" % (k, v) for k, v in sorted(terms.items())))
            step += 1

    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")
    nets.save_checkpoint(ckpt_path, weights, fingerprint,
                         extra={"epochs": str(tc.epochs), "steps": str(step)})
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        f.write(tc.to_text())
    with open(os.path.join(out_dir, "train_log.txt"), "w") as f:
        f.write("\n".join(log) + "\n")
    return weights, log


def predict_depths(weights, samples, cfg, tc, points=None):
    """Full-resolution depth predictions (numpy) for a list of samples."""
    out = []
    for sample in samples:
        depths, _, _, _ = infer_depth(weights, sample, cfg, tc, points=points)
        out.append(depths[0].values.data[0])
    return out


def evaluate(weights, benchmark, tc, points=None, n_iter=None, bounds=sc.DEPTH_RANGE):
    """Depth metrics on the evaluation split plus motion-field diagnostics."""
    cfg = tc.model_config()
    samples = benchmark.eval_all
    preds = predict_depths(weights, samples, cfg, tc, points=points)
    report = evalm.evaluate_predictions(samples, preds, bounds)
    diag = motion_diagnostics(weights, benchmark.eval_dynamic, cfg, tc,
                              n_iter if n_iter is not None else tc.eval_iters)
    return report, diag


def motion_diagnostics(weights, samples, cfg, tc, n_iter):
    """Mean |residual| inside vs outside ground-truth object masks."""
    inside, outside = [], []
    if not tc.motion_field:
        return {"inside": 0.0, "outside": 0.0, "ratio": 0.0}
    for sample in samples:
        depths, _, poses, _ = infer_depth(weights, sample, cfg, tc)
        motions, _ = estimate_motions(weights, sample, depths[0], poses, cfg, tc, n_iter)
        mask = sample.object_mask
        if not mask.any():
            continue
        for m in motions:
            mag = np.abs(m.values.data).mean(axis=0)
            inside.append(mag[mask].mean())
            outside.append(mag[~mask].mean())
    mean_in = float(np.mean(inside)) if inside else 0.0
    mean_out = float(np.mean(outside)) if outside else 0.0
    return {"inside": mean_in, "outside": mean_out,
            "ratio": mean_in / mean_out if mean_out > 0 else 0.0}
