"""Training losses: fully supervised, and the audio-only weak recipe.

Fully supervised: cross entropy over audio and video nodes plus optional
intermediate supervision on the encoder auxiliary heads; the total is the
unweighted sum of active components.

Weak supervision drops every video-label term and instead combines the
audio node loss with a per-endpoint assignment loss (the max video score
must match speech activity) and an InfoNCE contrastive loss over video
node features (temperature 0.07, cosine similarity): rows of one tracklet
at other endpoints are positives, rows of other tracklets are negatives.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, ShapeError

DEFAULT_TEMPERATURE = 0.07


@dataclass
class LossReport:
    """Total loss plus its named components (all on the tape)."""

    total: Tensor
    components: dict[str, Tensor]
    flags: list[str] = field(default_factory=list)

    def value(self) -> float:
        return float(self.total.data)

    def component_values(self) -> dict[str, float]:
        out = {name: float(t.data) for name, t in self.components.items()}
        out["total"] = self.value()
        return out


def _report(components: dict[str, Tensor], flags: list[str] | None = None) -> LossReport:
    names = list(components)
    total = components[names[0]]
    for name in names[1:]:
        total = ad.add(total, components[name])
    return LossReport(total, components, flags or [])


def _mean_ce(logits: Tensor, labels) -> Tensor:
    return ad.mean(ad.softmax_cross_entropy(logits, np.asarray(labels, dtype=int)))


def supervised_loss(
    audio_logits: Tensor,
    video_logits: Tensor,
    audio_labels,
    video_labels,
    slot_valid=None,
    aux_audio_logits: Tensor | None = None,
    aux_video_logits: Tensor | None = None,
) -> LossReport:
    """L_a + L_v (+ intermediate terms), each a mean cross entropy.

    Rows whose slot_valid entry is False (replacement duplicates) are
    masked out of every video term.
    """
    video_labels = np.asarray(video_labels, dtype=int).reshape(-1)
    if slot_valid is None:
        keep = np.arange(video_labels.size)
    else:
        keep = np.flatnonzero(np.asarray(slot_valid, dtype=bool).reshape(-1))
        if keep.size == 0:
            raise DataError("supervised_loss: every video row is masked; "
                            "the video mean is undefined")
    components = {
        "L_a": _mean_ce(audio_logits, audio_labels),
        "L_v": _mean_ce(ad.gather_rows(video_logits, keep), video_labels[keep]),
    }
    if aux_audio_logits is not None:
        components["intermediate_a"] = _mean_ce(aux_audio_logits, audio_labels)
    if aux_video_logits is not None:
        components["intermediate_v"] = _mean_ce(
            ad.gather_rows(aux_video_logits, keep), video_labels[keep])
    return _report(components)


def video_probabilities(video_logits: Tensor) -> Tensor:
    """Positive-class probability per video node, shape (n, 1).

    Sigmoid of the logit margin, which equals the softmax positive-class
    probability for two classes.
    """
    margin = ad.matmul(video_logits, Tensor(np.array([[-1.0], [1.0]])))
    return ad.sigmoid(margin)


def assignment_loss(video_probs_at_t: Tensor, y_at: int) -> Tensor:
    """y*(y - max V) + (1-y)*max V for one endpoint; scalar in [0, 1]."""
    n = video_probs_at_t.size
    if n < 2:
        raise ShapeError("assignment_loss: an endpoint needs at least 2 video nodes")
    if np.any(video_probs_at_t.data < 0.0) or np.any(video_probs_at_t.data > 1.0):
        raise DataError("assignment_loss: probabilities must lie in [0, 1]")
    col = ad.reshape(video_probs_at_t, (n, 1))
    max_v = ad.row_max_over_set(col, [np.arange(n)])
    if int(y_at) == 1:
        return ad.mean(ad.sub(Tensor(np.ones((1, 1))), max_v))
    return ad.mean(max_v)


def graph_assignment_loss(video_probs: Tensor, video_endpoints: Sequence[int],
                          audio_labels) -> Tensor:
    """Per-endpoint assignment losses summed over the graph.

    video_probs is the (n, 1) column of positive-class probabilities in
    node order; video_endpoints maps each row to its endpoint index.
    """
    if video_probs.data.ndim != 2 or video_probs.shape[1] != 1:
        raise ShapeError("graph_assignment_loss: probs must be an (n, 1) column")
    endpoints = np.asarray(video_endpoints)
    y = np.asarray(audio_labels, dtype=float)
    groups = []
    for j in range(y.size):
        idx = np.flatnonzero(endpoints == j)
        if idx.size < 2:
            raise ShapeError(f"graph_assignment_loss: endpoint {j} has "
                             f"{idx.size} video nodes, needs >= 2")
        groups.append(idx)
    max_v = ad.row_max_over_set(video_probs, groups)  # (l, 1)
    # y*(y - max) + (1-y)*max == y + (1 - 2y)*max for y in {0, 1}
    coeff = Tensor((1.0 - 2.0 * y).reshape(-1, 1))
    const = Tensor(y.reshape(-1, 1))
    return ad.tsum(ad.add(ad.mul(max_v, coeff), const))


def contrastive_loss(
    video_embeddings: Tensor,
    tracklet_ids: Sequence[str],
    video_endpoints: Sequence[int],
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[Tensor, int]:
    """InfoNCE over L2-normalized rows with cosine similarity.

    For each anchor row, positives are rows with the same tracklet id at
    a different endpoint; negatives are rows with a different id anywhere
    in the graph. Each (anchor, positive) term uses only that positive
    and the anchor's negatives in its denominator; terms are averaged per
    anchor, then across anchors with at least one positive.

    Returns (loss, n_anchors). With no usable anchor the loss is zero and
    a warning is emitted.
    """
    ids = list(tracklet_ids)
    endpoints = list(video_endpoints)
    n = len(ids)
    if video_embeddings.shape[0] != n or len(endpoints) != n:
        raise ShapeError("contrastive_loss: ids/endpoints must match embedding rows")
    z = ad.l2_normalize(video_embeddings)
    sims = ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / temperature)

    total: Tensor | None = None
    n_anchors = 0
    for a in range(n):
        pos = [b for b in range(n)
               if b != a and ids[b] == ids[a] and endpoints[b] != endpoints[a]]
        neg = [b for b in range(n) if ids[b] != ids[a]]
        if not pos:
            continue
        neg_sum = ad.tsum(ad.exp(ad.gather_elements(sims, [a] * len(neg), neg)))
        pos_vals = ad.gather_elements(sims, [a] * len(pos), pos)
        log_denom = ad.log(ad.add(ad.exp(pos_vals), neg_sum))
        anchor_loss = ad.mean(ad.sub(log_denom, pos_vals))
        total = anchor_loss if total is None else ad.add(total, anchor_loss)
        n_anchors += 1

    if total is None:
        warnings.warn("contrastive_loss: no anchor has a positive; returning zero")
        return Tensor(np.asarray(0.0)), 0
    return ad.scale(total, 1.0 / n_anchors), n_anchors


def weak_loss(
    audio_logits: Tensor,
    video_probs: Tensor,
    video_embeddings: Tensor | None,
    tracklet_ids: Sequence[str],
    video_endpoints: Sequence[int],
    audio_labels,
    aux_audio_logits: Tensor | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
) -> LossReport:
    """L_a + L_s (+ L_c + audio intermediate term); no video label enters.

    Pass video_embeddings=None to drop the contrastive term (the
    assignment-only ablation).
    """
    components = {
        "L_a": _mean_ce(audio_logits, audio_labels),
        "L_s": graph_assignment_loss(video_probs, video_endpoints, audio_labels),
    }
    flags: list[str] = []
    if video_embeddings is not None:
        loss_c, n_anchors = contrastive_loss(video_embeddings, tracklet_ids,
                                             video_endpoints, temperature)
        components["L_c"] = loss_c
        if n_anchors == 0:
            flags.append("contrastive_no_positives")
    if aux_audio_logits is not None:
        components["intermediate_a"] = _mean_ce(aux_audio_logits, audio_labels)
    return _report(components, flags)


# ---------------------------------------------------------------------------
# Adapters from a model forward pass + sample
# ---------------------------------------------------------------------------


def full_graph_loss(result, sample, intermediate: bool = True) -> LossReport:
    """Fully supervised loss for one ForwardResult/GraphSample pair."""
    return supervised_loss(
        result.audio_logits,
        result.video_logits,
        sample.audio_labels.astype(int),
        sample.video_labels,
        slot_valid=sample.slot_valid,
        aux_audio_logits=result.aux_audio_logits if intermediate else None,
        aux_video_logits=result.aux_video_logits if intermediate else None,
    )


def weak_graph_loss(result, sample, use_contrastive: bool = True,
                    intermediate: bool = True,
                    temperature: float = DEFAULT_TEMPERATURE) -> LossReport:
    """Weakly supervised loss; video labels are never read."""
    layout = result.layout
    return weak_loss(
        result.audio_logits,
        video_probabilities(result.video_logits),
        result.penultimate_video if use_contrastive else None,
        layout.video_tracklet_ids(),
        layout.video_endpoints(),
        sample.audio_labels.astype(int),
        aux_audio_logits=result.aux_audio_logits if intermediate else None,
        temperature=temperature,
    )
