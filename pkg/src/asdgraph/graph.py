"""Spatio-temporal speaker graphs: layout, EdgeConvolution, block variants.

Every sampled window becomes a graph of (i+1)*l nodes: one audio node and
i video nodes per endpoint, ordered endpoint-major with audio first.
Spatial edges form a complete graph inside each endpoint; temporal edges
link consecutive endpoints, audio to audio and video to video by tracklet
identity (falling back to the slot-wise counterpart when an identity
disappears).

Message passing is EdgeConvolution: each node takes the elementwise max,
over itself and its neighbors, of a two-layer MLP applied to
concat(x_i, x_j - x_i). Blocks compose a spatial and a temporal pass in
one of five arrangements (ST, TS, Parallel, Joint, TwoStream), all but
TwoStream wrapped in a residual connection.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, ShapeError
from .mfcc import MfccConfig, num_frames
from .nn import EdgeMlp, Linear, MlpEncoder, prefixed
from .scene import GraphSample, clip_samples

BLOCK_STYLES = ("ST", "TS", "TwoStream", "Parallel", "Joint")


@dataclass(frozen=True)
class ModelConfig:
    audio_in: int
    visual_in: int
    block_style: str = "ST"
    num_blocks: int = 4
    hidden: int = 128
    d_in: int = 128
    d_a: int = 64
    encoder_width: int = 64

    def __post_init__(self):
        if self.block_style not in BLOCK_STYLES:
            raise ConfigError(f"unknown block style {self.block_style!r}; "
                              f"expected one of {BLOCK_STYLES}")
        if self.num_blocks < 1 or self.hidden < 1:
            raise ConfigError("num_blocks and hidden must be >= 1")
        if min(self.audio_in, self.visual_in, self.d_in, self.d_a,
               self.encoder_width) < 1:
            raise ConfigError("all model dimensions must be >= 1")

    @classmethod
    def for_task(cls, clip_len: int, fps: float, d_v: int,
                 mfcc_cfg: MfccConfig | None = None, **kwargs) -> "ModelConfig":
        """Derive the encoder input shapes from the sampling geometry."""
        mfcc_cfg = mfcc_cfg or MfccConfig()
        frames = num_frames(clip_samples(fps, clip_len), mfcc_cfg)
        return cls(audio_in=frames * mfcc_cfg.n_cepstra,
                   visual_in=clip_len * d_v, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------


@dataclass
class GraphLayout:
    """Node index map plus spatial/temporal neighbor lists."""

    l: int
    i: int
    spatial_adj: list[list[int]]
    temporal_adj: list[list[int]]
    tracklet_ids: list[str | None]  # per node; None for audio nodes

    @property
    def num_nodes(self) -> int:
        return (self.i + 1) * self.l

    def audio_index(self, j: int) -> int:
        return j * (self.i + 1)

    def video_index(self, j: int, s: int) -> int:
        return j * (self.i + 1) + 1 + s

    def is_audio(self, n: int) -> bool:
        return n % (self.i + 1) == 0

    def endpoint_of(self, n: int) -> int:
        return n // (self.i + 1)

    @property
    def audio_nodes(self) -> list[int]:
        return [self.audio_index(j) for j in range(self.l)]

    @property
    def video_nodes(self) -> list[int]:
        return [self.video_index(j, s) for j in range(self.l) for s in range(self.i)]

    @property
    def joint_adj(self) -> list[list[int]]:
        return [sorted(set(a) | set(b))
                for a, b in zip(self.spatial_adj, self.temporal_adj)]

    def video_tracklet_ids(self) -> list[str]:
        return [self.tracklet_ids[n] for n in self.video_nodes]

    def video_endpoints(self) -> list[int]:
        return [self.endpoint_of(n) for n in self.video_nodes]


def build_layout(l: int, i: int, tracklet_ids: Sequence[Sequence[str]]) -> GraphLayout:
    """Adjacency for an l-endpoint, i-slot graph.

    tracklet_ids is the l x i identity grid from the sample. Temporal
    video edges follow identity between consecutive endpoints, preferring
    the same slot, then the first slot holding the identity, then the
    slot-wise counterpart when the identity is absent.
    """
    if l < 1 or i < 1:
        raise ConfigError("build_layout: l and i must be >= 1")
    if len(tracklet_ids) != l or any(len(row) != i for row in tracklet_ids):
        raise ShapeError("build_layout: tracklet_ids must be l x i")
    stride = i + 1
    n_nodes = stride * l
    spatial: list[set[int]] = [set() for _ in range(n_nodes)]
    temporal: list[set[int]] = [set() for _ in range(n_nodes)]

    for j in range(l):
        members = [j * stride + m for m in range(stride)]
        for a in members:
            for b in members:
                if a != b:
                    spatial[a].add(b)

    for j in range(l - 1):
        a0, a1 = j * stride, (j + 1) * stride
        temporal[a0].add(a1)
        temporal[a1].add(a0)
        nxt = list(tracklet_ids[j + 1])
        for s in range(i):
            tid = tracklet_ids[j][s]
            if nxt[s] == tid:
                partner = s
            elif tid in nxt:
                partner = nxt.index(tid)
            else:
                partner = s
            u = j * stride + 1 + s
            v = (j + 1) * stride + 1 + partner
            temporal[u].add(v)
            temporal[v].add(u)

    ids: list[str | None] = []
    for j in range(l):
        ids.append(None)
        ids.extend(tracklet_ids[j])
    return GraphLayout(l=l, i=i,
                       spatial_adj=[sorted(s) for s in spatial],
                       temporal_adj=[sorted(s) for s in temporal],
                       tracklet_ids=ids)


# ---------------------------------------------------------------------------
# EdgeConvolution
# ---------------------------------------------------------------------------


def edge_conv(features: Tensor, adjacency: Sequence[Sequence[int]],
              mlp: EdgeMlp, training: bool) -> Tensor:
    """x_i' = max over j in N(i) u {i} of mlp(concat(x_i, x_j - x_i)).

    The self edge keeps isolated nodes defined: they reduce to
    mlp(concat(x_i, 0)).
    """
    n = features.shape[0]
    if len(adjacency) != n:
        raise ShapeError("edge_conv: adjacency size does not match features")
    anchors: list[int] = []
    neighbors: list[int] = []
    groups: list[range] = []
    pos = 0
    for node in range(n):
        members = sorted({node, *adjacency[node]})  # lowest index wins max ties
        anchors.extend([node] * len(members))
        neighbors.extend(members)
        groups.append(range(pos, pos + len(members)))
        pos += len(members)
    x_a = ad.gather_rows(features, anchors)
    x_n = ad.gather_rows(features, neighbors)
    messages = mlp(ad.concat([x_a, ad.sub(x_n, x_a)], axis=1), training)
    return ad.row_max_over_set(messages, groups)


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


class StBlock:
    """Spatial message passing, then temporal, plus the residual path."""

    order = ("spatial", "temporal")

    def __init__(self, rng, d: int, hidden: int):
        self.spatial = EdgeMlp(rng, 2 * d, hidden, d)
        self.temporal = EdgeMlp(rng, 2 * d, hidden, d)

    def __call__(self, x: Tensor, layout: GraphLayout, training: bool) -> Tensor:
        first, second = self.order
        adj = {"spatial": layout.spatial_adj, "temporal": layout.temporal_adj}
        h = edge_conv(x, adj[first], getattr(self, first), training)
        h = edge_conv(h, adj[second], getattr(self, second), training)
        return ad.add(h, x)

    def zero_output_layers_(self):
        self.spatial.zero_output_layer_()
        self.temporal.zero_output_layer_()

    def named_parameters(self):
        return {**prefixed("spatial", self.spatial.named_parameters()),
                **prefixed("temporal", self.temporal.named_parameters())}

    def named_buffers(self):
        return {**prefixed("spatial", self.spatial.named_buffers()),
                **prefixed("temporal", self.temporal.named_buffers())}


class TsBlock(StBlock):
    """Temporal first, then spatial."""

    order = ("temporal", "spatial")


class ParallelBlock:
    """Spatial and temporal passes side by side, fused by a linear layer."""

    def __init__(self, rng, d: int, hidden: int):
        self.spatial = EdgeMlp(rng, 2 * d, hidden, d)
        self.temporal = EdgeMlp(rng, 2 * d, hidden, d)
        self.fuse = Linear(rng, 2 * d, d)

    def __call__(self, x: Tensor, layout: GraphLayout, training: bool) -> Tensor:
        hs = edge_conv(x, layout.spatial_adj, self.spatial, training)
        ht = edge_conv(x, layout.temporal_adj, self.temporal, training)
        return ad.add(self.fuse(ad.concat([hs, ht], axis=1)), x)

    def zero_output_layers_(self):
        self.spatial.zero_output_layer_()
        self.temporal.zero_output_layer_()

    def named_parameters(self):
        return {**prefixed("spatial", self.spatial.named_parameters()),
                **prefixed("temporal", self.temporal.named_parameters()),
                **prefixed("fuse", self.fuse.named_parameters())}

    def named_buffers(self):
        return {**prefixed("spatial", self.spatial.named_buffers()),
                **prefixed("temporal", self.temporal.named_buffers())}


class JointBlock:
    """One EdgeConvolution over the union of both adjacencies."""

    def __init__(self, rng, d: int, hidden: int):
        self.joint = EdgeMlp(rng, 2 * d, hidden, d)

    def __call__(self, x: Tensor, layout: GraphLayout, training: bool) -> Tensor:
        return ad.add(edge_conv(x, layout.joint_adj, self.joint, training), x)

    def zero_output_layers_(self):
        self.joint.zero_output_layer_()

    def named_parameters(self):
        return prefixed("joint", self.joint.named_parameters())

    def named_buffers(self):
        return prefixed("joint", self.joint.named_buffers())


class TwoStreamBlock:
    """One residual step of each independent stream."""

    def __init__(self, rng, d: int, hidden: int):
        self.spatial = EdgeMlp(rng, 2 * d, hidden, d)
        self.temporal = EdgeMlp(rng, 2 * d, hidden, d)

    def __call__(self, xs: Tensor, xt: Tensor, layout: GraphLayout,
                 training: bool) -> tuple[Tensor, Tensor]:
        xs = ad.add(edge_conv(xs, layout.spatial_adj, self.spatial, training), xs)
        xt = ad.add(edge_conv(xt, layout.temporal_adj, self.temporal, training), xt)
        return xs, xt

    def zero_output_layers_(self):
        self.spatial.zero_output_layer_()
        self.temporal.zero_output_layer_()

    def named_parameters(self):
        return {**prefixed("spatial", self.spatial.named_parameters()),
                **prefixed("temporal", self.temporal.named_parameters())}

    def named_buffers(self):
        return {**prefixed("spatial", self.spatial.named_buffers()),
                **prefixed("temporal", self.temporal.named_buffers())}


_BLOCK_CLASSES = {"ST": StBlock, "TS": TsBlock, "Parallel": ParallelBlock,
                  "Joint": JointBlock, "TwoStream": TwoStreamBlock}


# ---------------------------------------------------------------------------
# The full network
# ---------------------------------------------------------------------------


@dataclass
class PhiEmbedding:
    """Per-node feature rows plus the layout they are indexed by."""

    features: Tensor  # ((i+1)*l, d)
    layout: GraphLayout


@dataclass
class ForwardResult:
    audio_logits: Tensor  # (l, 2)
    video_logits: Tensor  # (l*i, 2)
    aux_audio_logits: Tensor  # (l, 2) encoder intermediate head
    aux_video_logits: Tensor  # (l*i, 2)
    penultimate_video: Tensor  # video-node features feeding the last block
    layout: GraphLayout

    def video_scores(self) -> np.ndarray:
        """Softmax positive-class probability per video node."""
        z = self.video_logits.data
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        return e[:, 1] / e.sum(axis=1)


class SpeakerGraphNet:
    """Encoders -> node embedding -> message-passing blocks -> 2-class heads."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.f_a = MlpEncoder(rng, cfg.audio_in, cfg.encoder_width, cfg.d_a)
        self.f_v = MlpEncoder(rng, cfg.visual_in, cfg.encoder_width, cfg.d_a)
        self.reducer = Linear(rng, cfg.d_a, cfg.d_in)
        block_cls = _BLOCK_CLASSES[cfg.block_style]
        self.blocks = [block_cls(rng, cfg.d_in, cfg.hidden)
                       for _ in range(cfg.num_blocks)]
        self.stream_fuse = (Linear(rng, 2 * cfg.d_in, cfg.d_in)
                            if cfg.block_style == "TwoStream" else None)
        self.audio_head = Linear(rng, cfg.d_in, 2)
        self.video_head = Linear(rng, cfg.d_in, 2)

    # -- assembly ----------------------------------------------------------

    def encoder_inputs(self, sample: GraphSample) -> tuple[Tensor, Tensor]:
        a = np.stack([clip.reshape(-1) for clip in sample.audio_clips])
        v = sample.visual_clips.reshape(sample.l * sample.i, -1)
        if a.shape[1] != self.cfg.audio_in or v.shape[1] != self.cfg.visual_in:
            raise ShapeError(
                f"sample feeds ({a.shape[1]}, {v.shape[1]}) inputs, model expects "
                f"({self.cfg.audio_in}, {self.cfg.visual_in})")
        return Tensor(a), Tensor(v)

    def assemble_phi(self, sample: GraphSample) -> tuple[PhiEmbedding, Tensor, Tensor]:
        """Shared-weight encoder passes, node ordering, linear reduction.

        Returns (phi, aux_audio_logits, aux_video_logits).
        """
        a_in, v_in = self.encoder_inputs(sample)
        emb_a, aux_a = self.f_a(a_in)
        emb_v, aux_v = self.f_v(v_in)
        layout = build_layout(sample.l, sample.i, sample.tracklet_ids)
        # Row for node n: audio j sits at j, video (j, s) at l + j*i + s.
        perm = np.empty(layout.num_nodes, dtype=np.intp)
        for j in range(sample.l):
            perm[layout.audio_index(j)] = j
            for s in range(sample.i):
                perm[layout.video_index(j, s)] = sample.l + j * sample.i + s
        stacked = ad.concat([emb_a, emb_v], axis=0)
        phi = self.reducer(ad.gather_rows(stacked, perm))
        return PhiEmbedding(phi, layout), aux_a, aux_v

    def run_blocks(self, phi: PhiEmbedding, training: bool) -> tuple[Tensor, Tensor]:
        """Returns (final node features, features entering the last block)."""
        layout = phi.layout
        if self.cfg.block_style == "TwoStream":
            xs = xt = phi.features
            penult = phi.features
            for idx, block in enumerate(self.blocks):
                if idx == len(self.blocks) - 1:
                    penult = ad.concat([xs, xt], axis=1)
                xs, xt = block(xs, xt, layout, training)
            return self.stream_fuse(ad.concat([xs, xt], axis=1)), penult
        x = phi.features
        penult = x
        for idx, block in enumerate(self.blocks):
            if idx == len(self.blocks) - 1:
                penult = x
            x = block(x, layout, training)
        return x, penult

    def readout(self, features: Tensor, layout: GraphLayout) -> tuple[Tensor, Tensor]:
        """One linear head per node kind; logits in node order."""
        audio = self.audio_head(ad.gather_rows(features, layout.audio_nodes))
        video = self.video_head(ad.gather_rows(features, layout.video_nodes))
        return audio, video

    def forward(self, sample: GraphSample, training: bool) -> ForwardResult:
        phi, aux_a, aux_v = self.assemble_phi(sample)
        final, penult = self.run_blocks(phi, training)
        audio_logits, video_logits = self.readout(final, phi.layout)
        penult_video = ad.gather_rows(penult, phi.layout.video_nodes)
        return ForwardResult(audio_logits, video_logits, aux_a, aux_v,
                             penult_video, phi.layout)

    # -- parameters and persistence -----------------------------------------

    def zero_block_outputs_(self) -> None:
        """Zero every EdgeConv output layer; residual blocks become identity."""
        for block in self.blocks:
            block.zero_output_layers_()

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(prefixed("f_a", self.f_a.named_parameters()))
        out.update(prefixed("f_v", self.f_v.named_parameters()))
        out.update(prefixed("reducer", self.reducer.named_parameters()))
        for idx, block in enumerate(self.blocks):
            out.update(prefixed(f"blocks.{idx}", block.named_parameters()))
        if self.stream_fuse is not None:
            out.update(prefixed("stream_fuse", self.stream_fuse.named_parameters()))
        out.update(prefixed("audio_head", self.audio_head.named_parameters()))
        out.update(prefixed("video_head", self.video_head.named_parameters()))
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for idx, block in enumerate(self.blocks):
            out.update(prefixed(f"blocks.{idx}", block.named_buffers()))
        return out

    def save(self, path, extra_header: dict | None = None) -> None:
        arrays = {f"param:{k}": v.data for k, v in self.named_parameters().items()}
        arrays.update({f"buffer:{k}": v for k, v in self.named_buffers().items()})
        header = {"model_config": self.cfg.to_dict()}
        if extra_header:
            header.update(extra_header)
        ad.save_arrays(path, arrays, header)

    @classmethod
    def load(cls, path) -> tuple["SpeakerGraphNet", dict]:
        arrays, header = ad.load_arrays(path)
        try:
            cfg = ModelConfig(**header["model_config"])
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"checkpoint {path} lacks a model config: {e}") from e
        model = cls(cfg, np.random.default_rng(0))
        params = model.named_parameters()
        buffers = model.named_buffers()
        for key, value in arrays.items():
            kind, _, name = key.partition(":")
            target = params.get(name) if kind == "param" else buffers.get(name)
            if target is None:
                raise CheckpointError(f"checkpoint {path}: unexpected entry {key}")
            holder = target.data if isinstance(target, Tensor) else target
            if holder.shape != value.shape:
                raise CheckpointError(
                    f"checkpoint {path}: {key} has shape {value.shape}, "
                    f"expected {holder.shape}")
            holder[...] = value
        missing = ({f"param:{k}" for k in params} | {f"buffer:{k}" for k in buffers}) \
            - set(arrays)
        if missing:
            raise CheckpointError(f"checkpoint {path}: missing entries {sorted(missing)}")
        return model, header
