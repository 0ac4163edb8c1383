"""Training loops for the fully and weakly supervised recipes.

Each epoch draws samples_per_tracklet anchor windows inside every
tracklet of every scene (the data order is fully determined by the
seed), forwards one graph per step, and applies Adam with the milestone
learning-rate schedule. Weak mode forces two video slots per endpoint
and, when a scene has a single identity, borrows a silent clip from
another scene so the contrastive loss always sees a second identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericError, SamplingError
from .graph import ModelConfig, SpeakerGraphNet
from .losses import full_graph_loss, weak_graph_loss
from .mfcc import MfccConfig
from .optim import Adam, milestone_lr
from .scene import (
    EndpointPlan,
    GraphSample,
    Scene,
    make_endpoints,
    sample_inference,
    sample_training,
)

DIVERGENCE_LIMIT = 1e6

FULL_DEFAULTS = dict(lr=3e-4, milestones=(6, 8), epochs=12)
WEAK_DEFAULTS = dict(lr=7e-6, milestones=(12, 16), epochs=20)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "full"  # "full" or "weak"
    lr: float = 3e-4
    milestones: tuple[int, ...] = (6, 8)
    gamma: float = 0.1
    epochs: int = 12
    samples_per_tracklet: int = 4
    batch: int = 1
    seed: int = 0
    intermediate: bool = True
    use_contrastive: bool = True  # weak mode only
    temperature: float = 0.07
    freeze_encoders: bool = False

    def __post_init__(self):
        if self.mode not in ("full", "weak"):
            raise ConfigError(f"unknown training mode {self.mode!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        ms = list(self.milestones)
        if ms != sorted(ms) or len(set(ms)) != len(ms) or \
                (ms and ms[-1] >= self.epochs):
            raise ConfigError("milestones must be strictly increasing and < epochs")
        if self.epochs < 1 or self.samples_per_tracklet < 1 or self.batch < 1:
            raise ConfigError("epochs, samples_per_tracklet and batch must be >= 1")

    @classmethod
    def full(cls, **kwargs) -> "TrainConfig":
        return cls(mode="full", **{**FULL_DEFAULTS, **kwargs})

    @classmethod
    def weak(cls, **kwargs) -> "TrainConfig":
        return cls(mode="weak", **{**WEAK_DEFAULTS, **kwargs})


@dataclass
class TrainResult:
    model: SpeakerGraphNet
    log: list[dict] = field(default_factory=list)

    def epoch_mean_loss(self, epoch: int) -> float:
        vals = [e["loss"]["total"] for e in self.log if e["epoch"] == epoch]
        return float(np.mean(vals))


def find_silent_clip(corpus: list[Scene], exclude: Scene, clip_len: int,
                     rng: np.random.Generator, max_tries: int = 200):
    """A (scene, tracklet, start) whose window is fully silent, or None."""
    others = [s for s in corpus if s is not exclude] or list(corpus)
    for _ in range(max_tries):
        scene = others[rng.integers(0, len(others))]
        if not scene.tracklets:
            continue
        t = scene.tracklets[rng.integers(0, len(scene.tracklets))]
        if t.n_frames < clip_len:
            continue
        start = int(rng.integers(0, t.n_frames - clip_len + 1))
        if not t.speaking[start:start + clip_len].any():
            return scene, t, start
    return None


def sample_weak_training(scene: Scene, plan: EndpointPlan, rng: np.random.Generator,
                         corpus: list[Scene],
                         mfcc_cfg: MfccConfig | None = None) -> GraphSample:
    """Weak-mode sampling: i forced to 2 and one tracklet pair kept for the
    whole window (without replacement when more than two are visible), the
    same shape inference graphs have. A lone identity gets a silent clip
    from another scene as its second slot so identity negatives exist."""
    mfcc_cfg = mfcc_cfg or MfccConfig()
    plan2 = replace(plan, i=2)
    endpoints = make_endpoints(plan2, scene.num_frames)
    last = endpoints[-1] + plan2.clip_len - 1
    pool = [t for t in scene.tracklets if t.covers(endpoints[0], last)]
    if not pool:
        raise SamplingError(
            f"no tracklet covers the window [{endpoints[0]}, {last}]")
    order = rng.permutation(len(pool))
    pair = [pool[order[0]], pool[order[1]] if len(pool) >= 2 else pool[order[0]]]
    sample = sample_inference(scene, plan2, pair, mfcc_cfg)
    if len(pool) >= 2:
        return sample
    found = find_silent_clip(corpus, scene, plan2.clip_len, rng)
    if found is None:
        return sample
    src_scene, tracklet, start = found
    foreign_id = f"ext:{src_scene.name}:{tracklet.id}"
    for j in range(sample.l):
        sample.visual_clips[j, 1] = \
            tracklet.visual_features[start:start + plan2.clip_len]
        sample.tracklet_ids[j][1] = foreign_id
        sample.video_labels[j, 1] = False
        sample.slot_valid[j, 1] = False
    return sample


def anchor_range(scene: Scene, tracklet, plan: EndpointPlan) -> tuple[int, int]:
    """Valid t0 interval (inclusive) keeping the window inside the tracklet."""
    lo = max(0, tracklet.start_frame)
    hi = min(scene.num_frames - plan.span, tracklet.end_frame - plan.span + 1)
    return lo, hi


def train(
    scenes: list[Scene],
    plan: EndpointPlan,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    mfcc_cfg: MfccConfig | None = None,
    model: SpeakerGraphNet | None = None,
) -> TrainResult:
    """Run the configured recipe over the scene corpus."""
    if not scenes:
        raise ConfigError("train: empty scene list")
    mfcc_cfg = mfcc_cfg or MfccConfig()
    rng = np.random.default_rng(train_cfg.seed)
    if model is None:
        model = SpeakerGraphNet(model_cfg, rng)
    params = model.named_parameters()
    if train_cfg.freeze_encoders:
        params = {k: v for k, v in params.items()
                  if not (k.startswith("f_a.") or k.startswith("f_v."))}
    opt = Adam(params, train_cfg.lr)
    log: list[dict] = []
    step = 0
    for epoch in range(train_cfg.epochs):
        opt.lr = milestone_lr(train_cfg.lr, list(train_cfg.milestones),
                              train_cfg.gamma, epoch)
        for scene in scenes:
            for tracklet in scene.tracklets:
                lo, hi = anchor_range(scene, tracklet, plan)
                if hi < lo:
                    continue
                for _ in range(train_cfg.samples_per_tracklet):
                    t0 = int(rng.integers(lo, hi + 1))
                    plan_t = replace(plan, t0=t0)
                    if train_cfg.mode == "weak":
                        sample = sample_weak_training(scene, plan_t, rng,
                                                      scenes, mfcc_cfg)
                    else:
                        sample = sample_training(scene, plan_t, rng, mfcc_cfg)
                    result = model.forward(sample, training=True)
                    if train_cfg.mode == "weak":
                        report = weak_graph_loss(
                            result, sample,
                            use_contrastive=train_cfg.use_contrastive,
                            intermediate=train_cfg.intermediate,
                            temperature=train_cfg.temperature)
                    else:
                        report = full_graph_loss(
                            result, sample, intermediate=train_cfg.intermediate)
                    if not np.isfinite(report.value()) or \
                            report.value() > DIVERGENCE_LIMIT:
                        raise NumericError(
                            f"training diverged at step {step}: "
                            f"loss={report.value()}")
                    opt.zero_grad()
                    report.total.backward()
                    opt.step()
                    log.append({"step": step, "epoch": epoch, "lr": opt.lr,
                                "loss": report.component_values()})
                    step += 1
    return TrainResult(model=model, log=log)
