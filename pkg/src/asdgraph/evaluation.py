"""Evaluation: average precision, sliding-window scoring, and baselines.

Predictions are (tracklet, frame) scores. The model scorer slides the
endpoint window over each scene with stride k, splits concurrent
tracklets into non-overlapping pairs (an odd count duplicates the last
speaker, keeping only the first copy's prediction), and averages every
window/endpoint score whose clip covers a frame.

average_precision follows the step-wise information-retrieval
definition, with tied scores collapsed into a single precision-recall
step, so a constant scorer lands exactly at the positive prevalence.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import DataError
from .graph import SpeakerGraphNet
from .mfcc import MfccConfig
from .scene import EndpointPlan, Scene, group_speakers, sample_inference


def average_precision(scores, labels) -> float:
    """AP = sum over PR steps of (R_k - R_{k-1}) * P_k, ties grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("average_precision: scores and labels must be 1-D and equal")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("average_precision: undefined without a positive label")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    start = 0
    while start < s.size:
        stop = start
        while stop < s.size and s[stop] == s[start]:
            stop += 1
        group_pos = int(y[start:stop].sum())
        tp += group_pos
        seen += stop - start
        if group_pos:
            ap += (group_pos / n_pos) * (tp / seen)
        start = stop
    return ap


@dataclass
class EvalResult:
    map: float
    per_scene: list[dict] = field(default_factory=list)
    n_predictions: int = 0

    def to_dict(self) -> dict:
        return {"map": self.map, "per_scene": self.per_scene,
                "n_predictions": self.n_predictions}


ScoreMap = dict[tuple[str, int], float]


def score_scene_with_model(model: SpeakerGraphNet, scene: Scene,
                           plan: EndpointPlan,
                           mfcc_cfg: MfccConfig | None = None) -> ScoreMap:
    """Per (tracklet id, frame) scores from sliding-window inference."""
    mfcc_cfg = mfcc_cfg or MfccConfig()
    sums: dict[tuple[str, int], float] = {}
    counts: dict[tuple[str, int], int] = {}
    for t0 in range(0, scene.num_frames - plan.span + 1, plan.k):
        window_plan = EndpointPlan(t0, plan.k, plan.l, plan.clip_len, 2)
        last = t0 + plan.span - 1
        covering = sorted((t for t in scene.tracklets if t.covers(t0, last)),
                          key=lambda t: t.id)
        if not covering:
            continue
        by_id = {t.id: t for t in covering}
        for group_ids in group_speakers([t.id for t in covering]):
            group = [by_id[g] for g in group_ids]
            sample = sample_inference(scene, window_plan, group, mfcc_cfg)
            with ad.no_grad():
                result = model.forward(sample, training=False)
            probs = result.video_scores().reshape(sample.l, sample.i)
            valid = sample.slot_valid
            for j, e in enumerate(sample.endpoints):
                for s, tid in enumerate(sample.tracklet_ids[j]):
                    if not valid[j, s]:
                        continue  # duplicated pad slot: keep the first copy only
                    for f in range(e, e + plan.clip_len):
                        key = (tid, f)
                        sums[key] = sums.get(key, 0.0) + float(probs[j, s])
                        counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}


def collect_predictions(scene: Scene, score_map: ScoreMap) -> tuple[np.ndarray, np.ndarray]:
    by_id = {t.id: t for t in scene.tracklets}
    scores, labels = [], []
    for (tid, frame), score in sorted(score_map.items()):
        t = by_id[tid]
        scores.append(score)
        labels.append(bool(t.speaking[t.local(frame)]))
    return np.asarray(scores), np.asarray(labels, dtype=bool)


Scorer = Callable[[Scene], ScoreMap]


def evaluate_scorer(scenes: list[Scene], scorer: Scorer) -> EvalResult:
    """Pool every (tracklet, frame) prediction and compute AP."""
    all_scores, all_labels = [], []
    per_scene = []
    for scene in scenes:
        if not scene.tracklets:
            warnings.warn(f"scene {scene.name!r} has no tracklets; skipped")
            continue
        score_map = scorer(scene)
        if not score_map:
            warnings.warn(f"scene {scene.name!r} produced no predictions; skipped")
            continue
        scores, labels = collect_predictions(scene, score_map)
        all_scores.append(scores)
        all_labels.append(labels)
        entry = {"scene": scene.name, "n": int(scores.size)}
        if labels.any():
            entry["ap"] = average_precision(scores, labels)
        per_scene.append(entry)
    if not all_scores:
        raise DataError("evaluate: no predictions were produced")
    scores = np.concatenate(all_scores)
    labels = np.concatenate(all_labels)
    return EvalResult(map=average_precision(scores, labels),
                      per_scene=per_scene, n_predictions=int(scores.size))


def evaluate(scenes: list[Scene], model: SpeakerGraphNet, plan: EndpointPlan,
             mfcc_cfg: MfccConfig | None = None) -> EvalResult:
    return evaluate_scorer(
        scenes, lambda sc: score_scene_with_model(model, sc, plan, mfcc_cfg))


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def ground_truth_speech(scene: Scene) -> np.ndarray:
    return scene.speech_active.copy()


def model_speech_activity(model: SpeakerGraphNet, plan: EndpointPlan,
                          mfcc_cfg: MfccConfig | None = None,
                          threshold: float = 0.5) -> Callable[[Scene], np.ndarray]:
    """Per-frame speech activity from the trained audio head."""
    mfcc_cfg = mfcc_cfg or MfccConfig()

    def predict(scene: Scene) -> np.ndarray:
        sums = np.zeros(scene.num_frames)
        counts = np.zeros(scene.num_frames)
        for t0 in range(0, scene.num_frames - plan.span + 1, plan.k):
            window_plan = EndpointPlan(t0, plan.k, plan.l, plan.clip_len, 2)
            last = t0 + plan.span - 1
            covering = sorted((t for t in scene.tracklets if t.covers(t0, last)),
                              key=lambda t: t.id)
            if not covering:
                continue
            group = group_speakers([t.id for t in covering])[0]
            by_id = {t.id: t for t in covering}
            sample = sample_inference(scene, window_plan,
                                      [by_id[g] for g in group], mfcc_cfg)
            with ad.no_grad():
                result = model.forward(sample, training=False)
            z = result.audio_logits.data
            p = np.exp(z[:, 1]) / np.exp(z).sum(axis=1)
            for j, e in enumerate(sample.endpoints):
                sums[e:e + plan.clip_len] += p[j]
                counts[e:e + plan.clip_len] += 1
        out = np.zeros(scene.num_frames, dtype=bool)
        mask = counts > 0
        out[mask] = (sums[mask] / counts[mask]) >= threshold
        return out

    return predict


def _full_coverage_scores(scene: Scene, value_fn) -> ScoreMap:
    out: ScoreMap = {}
    for t in scene.tracklets:
        for f in range(t.start_frame, t.end_frame + 1):
            out[(t.id, f)] = value_fn(t, f)
    return out


def _speech_events(active: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous [start, stop) runs of speech activity."""
    events = []
    f = 0
    n = active.size
    while f < n:
        if active[f]:
            start = f
            while f < n and active[f]:
                f += 1
            events.append((start, f))
        else:
            f += 1
    return events


def baselines(
    scenes: list[Scene],
    rng: np.random.Generator,
    speech_fn: Callable[[Scene], np.ndarray] | None = None,
) -> dict[str, EvalResult]:
    """The five reference scorers, each evaluated like the model.

    speech_fn supplies per-frame speech activity for the audio-based
    baselines (defaults to ground truth; pass model_speech_activity(...)
    to use a trained audio head).
    """
    speech_fn = speech_fn or ground_truth_speech

    def random_scorer(scene: Scene) -> ScoreMap:
        return _full_coverage_scores(scene, lambda t, f: float(rng.random()))

    def recall_scorer(scene: Scene) -> ScoreMap:
        return _full_coverage_scores(scene, lambda t, f: 1.0)

    def precision_scorer(scene: Scene) -> ScoreMap:
        return _full_coverage_scores(scene, lambda t, f: 0.0)

    def audio_assignment_scorer(scene: Scene) -> ScoreMap:
        scores = _full_coverage_scores(scene, lambda t, f: 0.0)
        active = speech_fn(scene)
        for start, stop in _speech_events(active):
            visible = [t for t in scene.tracklets
                       if t.start_frame <= start <= t.end_frame]
            if not visible:
                continue
            chosen = visible[rng.integers(0, len(visible))]
            for f in range(start, stop):
                if chosen.start_frame <= f <= chosen.end_frame:
                    scores[(chosen.id, f)] = 1.0
        return scores

    def largest_face_scorer(scene: Scene) -> ScoreMap:
        scores = _full_coverage_scores(scene, lambda t, f: 0.0)
        active = speech_fn(scene)
        for start, stop in _speech_events(active):
            visible = [t for t in scene.tracklets
                       if t.start_frame <= start <= t.end_frame]
            if not visible:
                continue
            def mean_area(t):
                lo = max(start, t.start_frame) - t.start_frame
                hi = min(stop, t.end_frame + 1) - t.start_frame
                return float(t.face_area[lo:hi].mean())
            chosen = max(visible, key=mean_area)
            for f in range(start, stop):
                if chosen.start_frame <= f <= chosen.end_frame:
                    scores[(chosen.id, f)] = 1.0
        return scores

    out = {}
    for name, scorer in [("random", random_scorer),
                         ("naive_recall", recall_scorer),
                         ("naive_precision", precision_scorer),
                         ("naive_audio_assignment", audio_assignment_scorer),
                         ("largest_face", largest_face_scorer)]:
        out[name] = evaluate_scorer(scenes, scorer)
    return out
