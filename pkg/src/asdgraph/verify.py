"""Self-contained invariant suite behind the `verify` command.

Each check returns a CheckResult; run_all prints one line per check and
reports overall success. The suite covers gradient correctness (every
primitive plus the full model pipeline for both loss modes), the graph
layout against a brute-force enumerator, the loss identities, the
residual identity of zero-initialized blocks, the average-precision
implementation against a recounted PR curve, and a mutation self-test
that flips one backward rule and expects the gradient check to fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import ModelConfig, SpeakerGraphNet, build_layout
from .losses import (
    assignment_loss,
    full_graph_loss,
    supervised_loss,
    weak_graph_loss,
)
from .evaluation import average_precision
from .scene import GraphSample


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------


def _primitive_cases(rng):
    """(name, f, make_x) triples covering every primitive."""
    mat = Tensor(rng.normal(size=(4, 3)))
    mat32 = Tensor(rng.normal(size=(3, 2)))
    mat43 = Tensor(rng.normal(size=(4, 3)))
    ones43 = Tensor(np.ones((4, 3)))
    groups = [[0, 1, 2], [2, 3], [4]]
    labels = [0, 2, 1, 2]
    gamma = Tensor(rng.uniform(0.5, 1.5, size=3))
    beta = Tensor(rng.normal(size=3))
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
    bias_base = Tensor(rng.normal(size=(5, 3)))

    def smooth(shape, lo=0.3, hi=1.7):
        sign = rng.choice([-1.0, 1.0], size=shape)
        return Tensor(sign * rng.uniform(lo, hi, size=shape), requires_grad=True)

    def bn_train(x):
        return ad.mean(ad.mul(ad.batch_norm(
            x, gamma, beta, np.zeros(3), np.ones(3), training=True), mat43))

    return [
        ("matmul", lambda x: ad.mean(ad.matmul(x, mat)), lambda: smooth((5, 4))),
        ("transpose", lambda x: ad.mean(ad.matmul(ad.transpose(x), mat32)),
         lambda: smooth((3, 5))),
        ("add", lambda x: ad.mean(ad.mul(ad.add(x, ones43), x)),
         lambda: smooth((4, 3))),
        ("add_bias", lambda x: ad.mean(ad.mul(ad.add(bias_base, x),
                                              ad.add(bias_base, x))),
         lambda: smooth((3,))),
        ("sub", lambda x: ad.mean(ad.mul(ad.sub(x, mat), ad.sub(x, mat))),
         lambda: smooth((4, 3))),
        ("mul", lambda x: ad.mean(ad.mul(x, ad.mul(x, mat))), lambda: smooth((4, 3))),
        ("scale", lambda x: ad.mean(ad.scale(ad.mul(x, x), -1.5)),
         lambda: smooth((4, 3))),
        ("concat", lambda x: ad.mean(ad.mul(ad.concat([x, mat], axis=0),
                                            ad.concat([x, mat], axis=0))),
         lambda: smooth((2, 3))),
        ("reshape", lambda x: ad.mean(ad.mul(ad.reshape(x, (6, 2)),
                                             ad.reshape(x, (6, 2)))),
         lambda: smooth((4, 3))),
        ("gather_rows", lambda x: ad.mean(ad.mul(ad.gather_rows(x, [0, 2, 2, 1]),
                                                 ad.gather_rows(x, [0, 2, 2, 1]))),
         lambda: smooth((3, 4))),
        ("gather_elements",
         lambda x: ad.mean(ad.exp(ad.gather_elements(x, [0, 1, 2], [1, 0, 2]))),
         lambda: smooth((3, 3))),
        ("relu", lambda x: ad.mean(ad.relu(x)), lambda: smooth((4, 4))),
        ("sigmoid", lambda x: ad.mean(ad.sigmoid(x)), lambda: smooth((4, 4))),
        ("exp", lambda x: ad.mean(ad.exp(x)), lambda: smooth((4, 4))),
        ("log", lambda x: ad.mean(ad.log(x)),
         lambda: Tensor(rng.uniform(0.4, 2.0, size=(4, 4)), requires_grad=True)),
        ("mean", lambda x: ad.mean(ad.mul(x, x)), lambda: smooth((4, 5))),
        ("sum", lambda x: ad.tsum(ad.mul(x, x)), lambda: smooth((4, 5))),
        ("row_max_over_set", lambda x: ad.mean(ad.row_max_over_set(x, groups)),
         lambda: Tensor(rng.normal(size=(5, 3)) * 2.0, requires_grad=True)),
        ("l2_normalize", lambda x: ad.mean(ad.mul(ad.l2_normalize(x), mat43)),
         lambda: Tensor(rng.normal(size=(4, 3)) + 3.0, requires_grad=True)),
        ("batch_norm_train", bn_train, lambda: smooth((4, 3))),
        ("batch_norm_eval",
         lambda x: ad.mean(ad.mul(ad.batch_norm(x, gamma, beta, rm, rv,
                                                training=False), x)),
         lambda: smooth((4, 3))),
        ("softmax_cross_entropy",
         lambda x: ad.mean(ad.softmax_cross_entropy(x, labels)),
         lambda: smooth((4, 3))),
    ]


def check_primitive_gradients(n_points: int = 20, tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(2024)
    worst = 0.0
    worst_name = ""
    for name, f, make_x in _primitive_cases(rng):
        for _ in range(n_points):
            err = ad.grad_check(f, make_x())
            if err > worst:
                worst, worst_name = err, name
    return CheckResult("primitive gradients", worst < tol,
                       f"max rel err {worst:.2e} ({worst_name})")


def tiny_pipeline(seed: int, mode: str):
    """A 4-block ST model on a 2x2 sample, with the mode's loss attached."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(audio_in=5, visual_in=6, block_style="ST", num_blocks=4,
                      hidden=4, d_in=3, d_a=3, encoder_width=4)
    model = SpeakerGraphNet(cfg, rng)
    l, i = 2, 2
    sample = GraphSample(
        endpoints=[0, 5],
        audio_clips=[rng.normal(size=(5, 1)) for _ in range(l)],
        visual_clips=rng.normal(size=(l, i, 3, 2)),
        tracklet_ids=[["a", "b"], ["a", "b"]],
        video_labels=rng.random((l, i)) < 0.5,
        audio_labels=np.array([True, False]),
        slot_valid=np.ones((l, i), dtype=bool),
    )

    def loss_fn():
        result = model.forward(sample, training=True)
        if mode == "weak":
            return weak_graph_loss(result, sample).total
        return full_graph_loss(result, sample).total

    return model, loss_fn


def pipeline_grad_error(seed: int, mode: str, eps: float = 1e-5) -> float:
    """Max finite-difference error across every parameter of the pipeline."""
    model, loss_fn = tiny_pipeline(seed, mode)
    worst = 0.0
    for name, param in model.named_parameters().items():
        err = ad.grad_check(lambda _t: loss_fn(), param, eps=eps)
        worst = max(worst, err)
    return worst


def check_pipeline_gradients(seeds=(11, 12), tol: float = 1e-5) -> CheckResult:
    worst = 0.0
    for mode, seed in zip(("full", "weak"), seeds):
        worst = max(worst, pipeline_grad_error(seed, mode))
    return CheckResult("pipeline gradients (full+weak)", worst < tol,
                       f"max rel err {worst:.2e}")


def check_mutation_detection(tol: float = 1e-5) -> CheckResult:
    """Flipping a backward rule must break the gradient check."""
    rng = np.random.default_rng(5)
    x = Tensor(rng.uniform(0.5, 1.5, size=(3, 3)), requires_grad=True)
    f = lambda t: ad.mean(ad.mul(t, t))
    clean = ad.grad_check(f, x)
    with ad.inject_backward_sign_flip("mul"):
        broken = ad.grad_check(f, x)
    ok = clean < tol and broken > 100 * tol
    return CheckResult("mutation self-test", ok,
                       f"clean {clean:.2e}, sign-flipped {broken:.2e}")


# ---------------------------------------------------------------------------
# Layout oracle
# ---------------------------------------------------------------------------


def _oracle_edges(l, i, ids):
    def audio(j):
        return j * (i + 1)

    def video(j, s):
        return j * (i + 1) + 1 + s

    spatial = set()
    for j in range(l):
        nodes = [audio(j)] + [video(j, s) for s in range(i)]
        for a in nodes:
            for b in nodes:
                if a < b:
                    spatial.add((a, b))
    temporal = set()
    for j in range(l - 1):
        temporal.add((audio(j), audio(j + 1)))
        for s in range(i):
            tid = ids[j][s]
            if ids[j + 1][s] == tid:
                p = s
            elif tid in ids[j + 1]:
                p = ids[j + 1].index(tid)
            else:
                p = s
            temporal.add(tuple(sorted((video(j, s), video(j + 1, p)))))
    return spatial, temporal


def _edges(adj):
    return {tuple(sorted((a, b))) for a, nbrs in enumerate(adj) for b in nbrs}


def check_layout_oracle(max_l: int = 9, max_i: int = 4) -> CheckResult:
    pool = ["a", "b", "c", "d", "e"]
    for l in range(1, max_l + 1):
        for i in range(1, max_i + 1):
            for trial in range(2):
                rng = np.random.default_rng(97 * l + 13 * i + trial)
                if trial == 0:
                    ids = [[f"t{s}" for s in range(i)] for _ in range(l)]
                else:
                    ids = [[pool[k] for k in rng.integers(0, len(pool), size=i)]
                           for _ in range(l)]
                lay = build_layout(l, i, ids)
                exp_s, exp_t = _oracle_edges(l, i, ids)
                if lay.num_nodes != (i + 1) * l:
                    return CheckResult("layout oracle", False,
                                       f"node count at l={l}, i={i}")
                if _edges(lay.spatial_adj) != exp_s or \
                        _edges(lay.temporal_adj) != exp_t:
                    return CheckResult("layout oracle", False,
                                       f"edge mismatch at l={l}, i={i}")
    return CheckResult("layout oracle", True,
                       f"l in [1,{max_l}], i in [1,{max_i}] exact")


# ---------------------------------------------------------------------------
# Loss identities
# ---------------------------------------------------------------------------


def check_loss_identities(tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(8)
    # Assignment formula on a grid.
    for max_v in np.linspace(0.0, 1.0, 11):
        v = Tensor(np.array([[max_v / 2.0], [max_v]]))
        for y in (0, 1):
            expected = y * (y - max_v) + (1 - y) * max_v
            if abs(float(assignment_loss(v, y).data) - expected) > tol:
                return CheckResult("loss identities", False, "assignment grid")
    # Totals equal component sums.
    report = supervised_loss(Tensor(rng.normal(size=(3, 2))),
                             Tensor(rng.normal(size=(6, 2))),
                             rng.integers(0, 2, 3), rng.integers(0, 2, (3, 2)),
                             aux_audio_logits=Tensor(rng.normal(size=(3, 2))),
                             aux_video_logits=Tensor(rng.normal(size=(6, 2))))
    if abs(report.value() - sum(float(c.data) for c in
                                report.components.values())) > tol:
        return CheckResult("loss identities", False, "supervised total")
    # Uniform logits give ln 2 per node.
    ln2 = supervised_loss(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))),
                          [1], [[0]])
    if abs(ln2.value() - 2 * math.log(2)) > tol:
        return CheckResult("loss identities", False, "uniform CE")
    return CheckResult("loss identities", True, "grid + totals + ln2 exact")


def check_residual_identity(tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(21)
    sample = GraphSample(
        endpoints=[0, 4, 8],
        audio_clips=[rng.normal(size=(4, 1)) for _ in range(3)],
        visual_clips=rng.normal(size=(3, 2, 2, 2)),
        tracklet_ids=[["a", "b"]] * 3,
        video_labels=np.zeros((3, 2), dtype=bool),
        audio_labels=np.zeros(3, dtype=bool),
        slot_valid=np.ones((3, 2), dtype=bool),
    )
    worst = 0.0
    for style in ("ST", "TS", "Parallel", "Joint"):
        for n_blocks in (1, 4, 6):
            cfg = ModelConfig(audio_in=4, visual_in=4, block_style=style,
                              num_blocks=n_blocks, hidden=5, d_in=4, d_a=4,
                              encoder_width=5)
            model = SpeakerGraphNet(cfg, np.random.default_rng(3))
            model.zero_block_outputs_()
            phi, _, _ = model.assemble_phi(sample)
            for training in (True, False):
                out, _ = model.run_blocks(phi, training=training)
                worst = max(worst, float(np.max(np.abs(out.data
                                                       - phi.features.data))))
    return CheckResult("residual identity", worst < tol,
                       f"max deviation {worst:.2e}")


# ---------------------------------------------------------------------------
# Average precision oracle
# ---------------------------------------------------------------------------


def _pr_curve_ap(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    ap = 0.0
    prev_recall = 0.0
    for th in np.unique(scores)[::-1]:
        predicted = scores >= th
        tp = np.sum(predicted & labels)
        ap += (tp / labels.sum() - prev_recall) * (tp / predicted.sum())
        prev_recall = tp / labels.sum()
    return ap


def check_ap_oracle(n_instances: int = 1000, tol: float = 1e-12) -> CheckResult:
    worst = 0.0
    for trial in range(n_instances):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(2, 51))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        if not labels.any():
            labels[int(rng.integers(0, n))] = True
        if trial % 3 == 0:
            scores = np.full(n, 0.5)  # constant-scorer = prevalence case
        elif trial % 3 == 1:
            scores = rng.choice([0.2, 0.5, 0.8], size=n)
        else:
            scores = rng.random(n)
        worst = max(worst, abs(average_precision(scores, labels)
                               - _pr_curve_ap(scores, labels)))
    return CheckResult("average precision oracle", worst < tol,
                       f"{n_instances} instances, max |diff| {worst:.2e}")


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def run_all(pipeline_points: int = 1) -> list[CheckResult]:
    checks = [
        check_primitive_gradients(n_points=max(3, pipeline_points)),
        check_pipeline_gradients(),
        check_mutation_detection(),
        check_layout_oracle(),
        check_loss_identities(),
        check_residual_identity(),
        check_ap_oracle(),
    ]
    return checks


def print_table(results: list[CheckResult]) -> bool:
    width = max(len(r.name) for r in results)
    all_passed = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.detail}")
        all_passed &= r.passed
    print(f"{'overall':<{width}}  {'PASS' if all_passed else 'FAIL'}")
    return all_passed
