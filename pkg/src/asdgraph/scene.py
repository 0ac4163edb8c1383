"""Multi-speaker scenes: synthesis, serialization, and endpoint sampling.

A Scene bundles a 16 kHz waveform, per-speaker face tracklets with frame
labels, and the per-frame speech-activity track. The synthetic generator
drives each speaker with a two-state Markov chain; audio is a sum of
per-speaker sinusoid carriers (distinct frequencies, so the waveform
carries speaker identity) over a noise floor, and visual channel 0 is
the speaking state plus Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, EndpointRangeError, SamplingError
from .mfcc import MfccConfig, mfcc

SAMPLE_RATE = 16000


def clip_samples(fps: float, clip_len: int) -> int:
    """Waveform samples covering clip_len frames."""
    return int(round(clip_len / fps * SAMPLE_RATE))


@dataclass
class Tracklet:
    """One identity's temporally contiguous face track."""

    id: str
    start_frame: int
    end_frame: int  # inclusive
    visual_features: np.ndarray  # (n_frames, d_v)
    speaking: np.ndarray  # (n_frames,) bool
    face_area: np.ndarray  # (n_frames,) in (0, 1]

    def __post_init__(self):
        self.visual_features = np.asarray(self.visual_features, dtype=np.float64)
        self.speaking = np.asarray(self.speaking, dtype=bool)
        self.face_area = np.asarray(self.face_area, dtype=np.float64)
        n = self.end_frame - self.start_frame + 1
        if self.end_frame < self.start_frame:
            raise DataError(f"tracklet {self.id}: end_frame before start_frame")
        if (len(self.visual_features) != n or len(self.speaking) != n
                or len(self.face_area) != n):
            raise DataError(f"tracklet {self.id}: per-frame arrays must have {n} rows")
        if np.any(self.face_area <= 0.0) or np.any(self.face_area > 1.0):
            raise DataError(f"tracklet {self.id}: face_area outside (0, 1]")

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1

    def covers(self, first_frame: int, last_frame: int) -> bool:
        return self.start_frame <= first_frame and last_frame <= self.end_frame

    def local(self, frame: int) -> int:
        return frame - self.start_frame


@dataclass
class Scene:
    fps: float
    num_frames: int
    audio: np.ndarray
    tracklets: list[Tracklet]
    speech_active: np.ndarray  # (num_frames,) bool
    name: str = ""

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.speech_active = np.asarray(self.speech_active, dtype=bool)
        self._mfcc_cache: dict = {}

    def validate(self) -> None:
        expected = int(round(self.num_frames / self.fps * SAMPLE_RATE))
        if self.audio.size != expected:
            raise DataError(f"scene {self.name}: audio has {self.audio.size} samples, "
                            f"expected {expected}")
        if self.speech_active.size != self.num_frames:
            raise DataError(f"scene {self.name}: speech_active length mismatch")
        derived = np.zeros(self.num_frames, dtype=bool)
        seen: dict[str, list[tuple[int, int]]] = {}
        for t in self.tracklets:
            if t.end_frame >= self.num_frames:
                raise DataError(f"scene {self.name}: tracklet {t.id} exceeds scene")
            derived[t.start_frame:t.end_frame + 1] |= t.speaking
            for s, e in seen.get(t.id, []):
                if not (t.end_frame < s or e < t.start_frame):
                    raise DataError(f"scene {self.name}: tracklets with id {t.id} overlap")
            seen.setdefault(t.id, []).append((t.start_frame, t.end_frame))
        if not np.array_equal(derived, self.speech_active):
            raise DataError(f"scene {self.name}: speech_active disagrees with tracklets")

    def frame_sample_bounds(self, frame: int) -> tuple[int, int]:
        lo = int(round(frame / self.fps * SAMPLE_RATE))
        hi = int(round((frame + 1) / self.fps * SAMPLE_RATE))
        return lo, hi

    def audio_window(self, frame: int, clip_len: int) -> np.ndarray:
        """Fixed-length waveform slice for a clip_len-frame window.

        The length depends only on clip_len, never on the start frame, so
        downstream MFCC matrices keep a constant shape.
        """
        n = clip_samples(self.fps, clip_len)
        lo = int(round(frame / self.fps * SAMPLE_RATE))
        lo = min(lo, self.audio.size - n)
        return self.audio[lo:lo + n]

    def window_mfcc(self, frame: int, clip_len: int, cfg: "MfccConfig") -> np.ndarray:
        """MFCC of a clip window, memoized per (frame, clip_len, cfg)."""
        key = (frame, clip_len, cfg)
        cached = self._mfcc_cache.get(key)
        if cached is None:
            cached = mfcc(self.audio_window(frame, clip_len), cfg)
            self._mfcc_cache[key] = cached
        return cached


@dataclass(frozen=True)
class EndpointPlan:
    """Where to sample a graph: l endpoints spaced k frames apart."""

    t0: int
    k: int
    l: int
    clip_len: int
    i: int

    def __post_init__(self):
        if self.k < 1 or self.l < 1 or self.i < 1 or self.clip_len < 1 or self.t0 < 0:
            raise ConfigError(f"invalid endpoint plan {self}")

    @property
    def span(self) -> int:
        """Frames from t0 to the end of the last endpoint's clip."""
        return (self.l - 1) * self.k + self.clip_len


def make_endpoints(plan: EndpointPlan, num_frames: int | None = None) -> list[int]:
    """The l endpoint frames {t0 + j*k : j < l}, strictly increasing."""
    if num_frames is not None and plan.t0 + plan.span > num_frames:
        raise EndpointRangeError(
            f"plan needs frames up to {plan.t0 + plan.span}, scene has {num_frames}")
    return [plan.t0 + j * plan.k for j in range(plan.l)]


@dataclass
class GraphSample:
    """Sampled inputs for one graph forward pass."""

    endpoints: list[int]
    audio_clips: list[np.ndarray]  # l MFCC matrices
    visual_clips: np.ndarray  # (l, i, clip_len, d_v)
    tracklet_ids: list[list[str]]  # l x i
    video_labels: np.ndarray  # (l, i) bool
    audio_labels: np.ndarray  # (l,) bool
    slot_valid: np.ndarray  # (l, i) bool

    @property
    def l(self) -> int:
        return len(self.endpoints)

    @property
    def i(self) -> int:
        return self.visual_clips.shape[1]


def _majority(labels: np.ndarray) -> bool:
    # Ties break toward "speaking".
    return bool(labels.mean() >= 0.5)


def available_tracklets(scene: Scene, endpoint: int, clip_len: int) -> list[Tracklet]:
    last = endpoint + clip_len - 1
    return [t for t in scene.tracklets if t.covers(endpoint, last)]


def clip_labels(scene: Scene, tracklet: Tracklet, endpoint: int, clip_len: int) -> bool:
    lo = tracklet.local(endpoint)
    return _majority(tracklet.speaking[lo:lo + clip_len])


def sample_training(
    scene: Scene,
    plan: EndpointPlan,
    rng: np.random.Generator,
    mfcc_cfg: MfccConfig | None = None,
) -> GraphSample:
    """Draw one training graph: per endpoint, i tracklet slots plus audio.

    Distinct tracklets are picked uniformly without replacement (order
    randomized); any remaining slots are refilled with replacement and
    flagged invalid in slot_valid so duplicate rows can be masked out of
    the video loss.
    """
    mfcc_cfg = mfcc_cfg or MfccConfig()
    endpoints = make_endpoints(plan, scene.num_frames)
    d_v = scene.tracklets[0].visual_features.shape[1] if scene.tracklets else 0

    audio_clips = []
    visual_clips = np.empty((plan.l, plan.i, plan.clip_len, d_v))
    ids: list[list[str]] = []
    video_labels = np.zeros((plan.l, plan.i), dtype=bool)
    audio_labels = np.zeros(plan.l, dtype=bool)
    slot_valid = np.zeros((plan.l, plan.i), dtype=bool)

    for j, e in enumerate(endpoints):
        pool = available_tracklets(scene, e, plan.clip_len)
        if not pool:
            raise SamplingError(f"no tracklet covers frames [{e}, {e + plan.clip_len})")
        order = rng.permutation(len(pool))
        n_distinct = min(plan.i, len(pool))
        chosen = [pool[order[s]] for s in range(n_distinct)]
        fills = [pool[idx] for idx in rng.integers(0, len(pool),
                                                   size=plan.i - n_distinct)]
        row_ids = []
        for s, t in enumerate(chosen + fills):
            lo = t.local(e)
            visual_clips[j, s] = t.visual_features[lo:lo + plan.clip_len]
            video_labels[j, s] = clip_labels(scene, t, e, plan.clip_len)
            slot_valid[j, s] = s < n_distinct
            row_ids.append(t.id)
        ids.append(row_ids)

        audio_clips.append(scene.window_mfcc(e, plan.clip_len, mfcc_cfg))
        audio_labels[j] = _majority(scene.speech_active[e:e + plan.clip_len])

    return GraphSample(endpoints, audio_clips, visual_clips, ids,
                       video_labels, audio_labels, slot_valid)


def sample_inference(
    scene: Scene,
    plan: EndpointPlan,
    group: list[Tracklet],
    mfcc_cfg: MfccConfig | None = None,
) -> GraphSample:
    """Deterministic graph for an inference group (same slots everywhere)."""
    mfcc_cfg = mfcc_cfg or MfccConfig()
    endpoints = make_endpoints(plan, scene.num_frames)
    d_v = group[0].visual_features.shape[1]
    n = len(group)

    audio_clips = []
    visual_clips = np.empty((plan.l, n, plan.clip_len, d_v))
    ids = []
    video_labels = np.zeros((plan.l, n), dtype=bool)
    audio_labels = np.zeros(plan.l, dtype=bool)
    slot_valid = np.zeros((plan.l, n), dtype=bool)
    first_seen: set[str] = set()
    keep = []
    for s, t in enumerate(group):
        keep.append(t.id not in first_seen)
        first_seen.add(t.id)

    for j, e in enumerate(endpoints):
        row_ids = []
        for s, t in enumerate(group):
            lo = t.local(e)
            visual_clips[j, s] = t.visual_features[lo:lo + plan.clip_len]
            video_labels[j, s] = clip_labels(scene, t, e, plan.clip_len)
            slot_valid[j, s] = keep[s]
            row_ids.append(t.id)
        ids.append(row_ids)
        audio_clips.append(scene.window_mfcc(e, plan.clip_len, mfcc_cfg))
        audio_labels[j] = _majority(scene.speech_active[e:e + plan.clip_len])

    return GraphSample(endpoints, audio_clips, visual_clips, ids,
                       video_labels, audio_labels, slot_valid)


def group_speakers(ids: list) -> list[list]:
    """Partition into pairs; an odd tail is padded by self-duplication."""
    if not ids:
        raise SamplingError("group_speakers: empty id list")
    groups = [list(ids[j:j + 2]) for j in range(0, len(ids), 2)]
    if len(groups[-1]) == 1:
        groups[-1] = [groups[-1][0], groups[-1][0]]
    return groups


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    num_speakers: int = 2
    num_frames: int = 120
    fps: float = 25.0
    stay_silent: float = 0.92  # P(silent -> silent)
    stay_speaking: float = 0.88  # P(speaking -> speaking)
    visual_noise: float = 0.5
    offset_noise: float = 0.0  # per-speaker constant shift of channel 0
    id_noise: float = 0.0  # per-speaker constant shift of the noise channels
    audio_noise: float = 0.05
    d_v: int = 8
    area_speaking_boost: float = 0.25
    carrier_base_hz: float = 400.0
    carrier_step_hz: float = 450.0

    def __post_init__(self):
        if not 1 <= self.num_speakers <= 4:
            raise ConfigError("num_speakers must be in [1, 4]")
        if self.num_frames < 1 or self.fps <= 0 or self.d_v < 1:
            raise ConfigError("num_frames, fps and d_v must be positive")
        for p in (self.stay_silent, self.stay_speaking):
            if not 0.0 < p < 1.0:
                raise ConfigError("Markov stay probabilities must be in (0, 1)")
        if min(self.visual_noise, self.offset_noise, self.id_noise,
               self.audio_noise) < 0:
            raise ConfigError("noise levels must be non-negative")


def speaking_stationary_fraction(params: SynthParams) -> float:
    """Stationary probability of the speaking state of the 2-state chain."""
    leave_silent = 1.0 - params.stay_silent
    leave_speaking = 1.0 - params.stay_speaking
    return leave_silent / (leave_silent + leave_speaking)


def _markov_states(params: SynthParams, rng: np.random.Generator) -> np.ndarray:
    pi1 = speaking_stationary_fraction(params)
    states = np.zeros(params.num_frames, dtype=bool)
    states[0] = rng.random() < pi1
    u = rng.random(params.num_frames - 1)
    for f in range(1, params.num_frames):
        stay = params.stay_speaking if states[f - 1] else params.stay_silent
        states[f] = states[f - 1] if u[f - 1] < stay else not states[f - 1]
    return states


def synth_scene(params: SynthParams, rng: np.random.Generator, name: str = "") -> Scene:
    """Generate one scene; deterministic given (params, rng state)."""
    n_samples = int(round(params.num_frames / params.fps * SAMPLE_RATE))
    sample_t = np.arange(n_samples) / SAMPLE_RATE
    # Frame index owning each audio sample.
    bounds = np.round(np.arange(params.num_frames + 1) / params.fps * SAMPLE_RATE)
    sample_frame = np.searchsorted(bounds, np.arange(n_samples), side="right") - 1

    audio = rng.normal(0.0, params.audio_noise, size=n_samples)
    tracklets = []
    speech = np.zeros(params.num_frames, dtype=bool)
    for s in range(params.num_speakers):
        speaking = _markov_states(params, rng)
        speech |= speaking
        carrier = params.carrier_base_hz + s * params.carrier_step_hz
        gate = speaking[sample_frame].astype(np.float64)
        audio += gate * np.sin(2.0 * np.pi * carrier * sample_t)

        feats = rng.normal(0.0, 1.0, size=(params.num_frames, params.d_v))
        feats[:, 0] = speaking.astype(np.float64)
        if params.visual_noise > 0:
            feats[:, 0] += rng.normal(0.0, params.visual_noise, size=params.num_frames)
        if params.offset_noise > 0:
            # Scene-constant per-speaker shift: identities differ in baseline
            # appearance, so per-clip level comparisons are confounded.
            feats[:, 0] += rng.normal(0.0, params.offset_noise)
        if params.id_noise > 0 and params.d_v > 1:
            # Scene-constant per-speaker signature on the non-label channels:
            # a persistent random appearance that identifies a face without
            # saying anything about whether it speaks.
            feats[:, 1:] += rng.normal(0.0, params.id_noise,
                                       size=params.d_v - 1)
        base_area = rng.uniform(0.15, 0.45)
        area = base_area + params.area_speaking_boost * speaking \
            + rng.normal(0.0, 0.02, size=params.num_frames)
        area = np.clip(area, 0.01, 1.0)
        tracklets.append(Tracklet(
            id=f"s{s}", start_frame=0, end_frame=params.num_frames - 1,
            visual_features=feats, speaking=speaking, face_area=area))

    scene = Scene(fps=params.fps, num_frames=params.num_frames, audio=audio,
                  tracklets=tracklets, speech_active=speech, name=name)
    scene.validate()
    return scene


# ---------------------------------------------------------------------------
# Serialization (self-describing JSON; lossless float round-trip)
# ---------------------------------------------------------------------------

SCENE_FORMAT = "asdgraph-scene-v1"


def scene_to_dict(scene: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "name": scene.name,
        "fps": scene.fps,
        "num_frames": scene.num_frames,
        "audio": scene.audio.tolist(),
        "speech_active": [bool(v) for v in scene.speech_active],
        "tracklets": [
            {
                "id": t.id,
                "start_frame": t.start_frame,
                "end_frame": t.end_frame,
                "visual_features": t.visual_features.tolist(),
                "speaking": [bool(v) for v in t.speaking],
                "face_area": t.face_area.tolist(),
            }
            for t in scene.tracklets
        ],
    }


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("format") != SCENE_FORMAT:
        raise DataError(f"not a scene document (format={doc.get('format')!r})")
    scene = Scene(
        fps=doc["fps"],
        num_frames=doc["num_frames"],
        audio=np.asarray(doc["audio"], dtype=np.float64),
        tracklets=[
            Tracklet(
                id=t["id"],
                start_frame=t["start_frame"],
                end_frame=t["end_frame"],
                visual_features=np.asarray(t["visual_features"], dtype=np.float64),
                speaking=np.asarray(t["speaking"], dtype=bool),
                face_area=np.asarray(t["face_area"], dtype=np.float64),
            )
            for t in doc["tracklets"]
        ],
        speech_active=np.asarray(doc["speech_active"], dtype=bool),
        name=doc.get("name", ""),
    )
    scene.validate()
    return scene


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, sort_keys=True, separators=(",", ":"))


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))
