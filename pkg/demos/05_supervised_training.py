#!/usr/bin/env python3
"""Train the fully supervised model on a small corpus and evaluate mAP.

Uses a reduced setup (16 scenes, 6 epochs) so the whole script runs in
about a minute; the acceptance suite runs the full-size experiment.
"""

import time

import numpy as np

from asdgraph import EndpointPlan, ModelConfig, SynthParams, TrainConfig, synth_scene
from asdgraph.evaluation import baselines, evaluate
from asdgraph.training import train

plan = EndpointPlan(t0=0, k=5, l=7, clip_len=15, i=2)


def make_corpus(seed, n, prefix):
    rng = np.random.default_rng(seed)
    scenes = []
    for j in range(n):
        params = SynthParams(num_speakers=int(rng.integers(2, 4)),
                             num_frames=150, stay_silent=0.985,
                             stay_speaking=0.97, visual_noise=0.4,
                             audio_noise=0.1, d_v=8)
        scenes.append(synth_scene(params, rng, name=f"{prefix}{j}"))
    return scenes


train_scenes = make_corpus(1, 16, "train")
test_scenes = make_corpus(2, 8, "test")

model_cfg = ModelConfig.for_task(plan.clip_len, 25.0, 8, block_style="ST",
                                 num_blocks=4, hidden=128, d_in=64)
train_cfg = TrainConfig(mode="full", lr=1e-3, milestones=(4,), epochs=6,
                        samples_per_tracklet=2, seed=0)

t0 = time.time()
result = train(train_scenes, plan, model_cfg, train_cfg)
print(f"trained {len(result.log)} steps in {time.time() - t0:.0f}s")
for epoch in range(train_cfg.epochs):
    print(f"  epoch {epoch}: mean loss {result.epoch_mean_loss(epoch):.3f}")

scored = evaluate(test_scenes, result.model, plan)
print(f"\ntest mAP {scored.map:.4f} over {scored.n_predictions} predictions")

print("\nreference scorers:")
for name, res in baselines(test_scenes, np.random.default_rng(0)).items():
    print(f"  {name:24s} {res.map:.4f}")
