"""Acceptance criteria, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the training criteria
take several minutes on one core.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from eamat import gradcheck as gc
from eamat import nn
from eamat import tensor as tn
from eamat.config import RunConfig
from eamat.cqa import CqaLayer, cqa
from eamat.entity import EntityBranch
from eamat.metrics import evaluate, metric_report, random_span_baseline, temporal_iou
from eamat.model import Localizer
from eamat.motion import decode_boundaries
from eamat.query import QueryEncoder, QuerySample, Vocabulary, load_lexicon
from eamat.synth import GenConfig, generate
from eamat.tensor import Tensor
from eamat.training import LossWeights, sample_loss, train


@pytest.fixture
def verdict(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}")
        assert ok, detail
    return emit


# ---------------------------------------------------------------------------


def test_1_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = gc.run_suite(seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.rel_error)
    failed = [r.name for r in results if not r.passed]
    ok = not failed and elapsed < 60
    verdict(1, "gradient suite", ok,
            f"{len(results)} cases, worst {worst.name} rel_err={worst.rel_error:.2e} (< 1e-4), "
            f"{elapsed:.1f}s (< 60s), failed={failed}")


def brute_force_decode(p_s, p_e):
    best, arg = -1.0, None
    for s in range(len(p_s)):
        for e in range(s, len(p_e)):
            v = p_s[s] * p_e[e]
            if v > best:
                best, arg = v, (s, e)
    return arg, best


def test_2_decode_oracle(verdict):
    rng = np.random.default_rng(2)
    mismatches, checked = 0, 0
    for T in (1, 2, 3, 8, 64):
        for k in range(1000):
            if k % 2:
                s_s, s_e = rng.normal(size=T) * 3, rng.normal(size=T) * 3
            else:  # coarse integer scores produce many exact ties
                s_s, s_e = rng.integers(0, 3, size=T).astype(float), rng.integers(0, 3, size=T).astype(float)
            pred = decode_boundaries(s_s, s_e)
            arg, best = brute_force_decode(pred.p_start, pred.p_end)
            mismatches += (pred.start, pred.end) != arg or pred.score != best
            checked += 1
    verdict(2, "decode oracle", mismatches == 0, f"{checked} vectors, {mismatches} mismatches")


def test_3_structural_invariants(verdict):
    rng = np.random.default_rng(3)
    problems = []

    # attention rows
    worst = 0.0
    for kind in nn.PROJECTION_KINDS:
        for T in (1, 2, 5, 9):
            block = nn.TransformerBlock(6, 2, rng, kind, scales=3)
            block.self_attention(Tensor(rng.normal(size=(T, 6)) * 4))
            worst = max(worst, np.abs(block.last_attention.sum(-1) - 1).max())
            if np.any(block.last_attention < 0):
                problems.append("negative attention weight")
    if worst > 1e-9:
        problems.append(f"attention row sum off by {worst:.1e}")

    # per-scale jacobian sparsity of the multi-scale LSTM
    T, S, d_in, d = 6, 3, 2, 6
    msl = nn.MultiScaleLstm(d_in, d, S, rng)
    x = rng.normal(size=(T, d_in))
    h, width = 1e-6, d // S
    for u in range(T):
        for j in range(d_in):
            xp, xm = x.copy(), x.copy()
            xp[u, j] += h
            xm[u, j] -= h
            jac = (msl(Tensor(xp)).data - msl(Tensor(xm)).data) / (2 * h)
            for s in range(1, S + 1):
                for t in range(T):
                    block = jac[t, (s - 1) * width : s * width]
                    linked = u <= t and (t - u) % s == 0
                    if linked != bool(np.any(block != 0)):
                        problems.append(f"jacobian scale {s} frame {u}->{t}")

    # frame-permutation equivariance of the entity branch before fusion
    fc2, branch = nn.Linear(5, 12, rng), EntityBranch(12, 2, rng)
    fv = rng.normal(size=(4, 5))
    perm_err = 0.0
    for _ in range(10):
        perm = rng.permutation(4)
        a = branch.encode_frames(fc2, Tensor(fv)).data[perm]
        b = branch.encode_frames(fc2, Tensor(fv[perm])).data
        perm_err = max(perm_err, np.abs(a - b).max())
    if perm_err > 1e-9:
        problems.append(f"permutation error {perm_err:.1e}")

    # query mask algebra
    lexicon = load_lexicon()
    enc = QueryEncoder(Vocabulary(lexicon, 8, rng), 8, 2, rng)
    q = QuerySample.from_tokens(["the", "person", "is", "opening", "a", "red", "door", "quickly"], lexicon)
    feats = enc(q)
    cls = q.classes
    ent_rows = [i for i, c in enumerate(cls) if c == "entity"]
    mot_rows = [i for i, c in enumerate(cls) if c == "motion"]
    if np.any(feats.F_q_motion.data[ent_rows] != 0) or np.any(feats.F_q_entity.data[mot_rows] != 0):
        problems.append("mask algebra")

    verdict(3, "structural invariants", not problems,
            f"attention row err {worst:.1e}, permutation err {perm_err:.1e}, problems={problems[:3]}")


def test_4_cqa_oracle(verdict):
    V = [[1.0, 0.0], [0.5, 2.0]]
    Q = [[0.0, 1.0], [1.0, -1.0]]

    def smax(vals):
        e = [math.exp(v) for v in vals]
        return [x / sum(e) for x in e]

    S = [[V[t][0] * Q[n][0] + V[t][1] * Q[n][1] for n in range(2)] for t in range(2)]
    S_r = [smax(row) for row in S]
    col = [smax([S[0][n], S[1][n]]) for n in range(2)]
    S_c = [[col[n][t] for n in range(2)] for t in range(2)]
    A_vq = [[S_r[t][0] * Q[0][k] + S_r[t][1] * Q[1][k] for k in range(2)] for t in range(2)]
    B = [[S_c[0][n] * V[0][k] + S_c[1][n] * V[1][k] for k in range(2)] for n in range(2)]
    A_qv = [[S_r[t][0] * B[0][k] + S_r[t][1] * B[1][k] for k in range(2)] for t in range(2)]

    layer = CqaLayer(2, np.random.default_rng(4))
    cqa(layer, Tensor(V), Tensor(Q))
    tr = layer.last
    err = max(np.abs(np.asarray(got) - np.asarray(want)).max() for got, want in (
        (tr.row_softmax, S_r), (tr.col_softmax, S_c), (tr.a_vq, A_vq), (tr.a_qv, A_qv)))
    verdict(4, "CQA oracle", err <= 1e-9, f"max abs error {err:.1e} (<= 1e-9)")


def test_5_metric_oracle(verdict):
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(10000):
        a = tuple(sorted(int(v) for v in rng.integers(0, 50, size=2)))
        b = tuple(sorted(int(v) for v in rng.integers(0, 50, size=2)))
        fa, fb = set(range(a[0], a[1] + 1)), set(range(b[0], b[1] + 1))
        bad += abs(temporal_iou(a, b) - float(Fraction(len(fa & fb), len(fa | fb)))) > 1e-12
    # IoU exactly 0.3, 0.5 and 0.7 must not count at their own threshold
    exact = metric_report([(0, 2), (0, 1), (0, 6)], [(0, 9), (0, 3), (0, 9)])
    strict_ok = exact.ious == [0.3, 0.5, 0.7] and exact.recall == {0.3: 2 / 3, 0.5: 1 / 3, 0.7: 0.0}
    verdict(5, "metric oracle", bad == 0 and strict_ok,
            f"10000 pairs, {bad} mismatches; exact-threshold recall {exact.recall}")


def desk_sample():
    return generate(GenConfig(), "train", 1)[0]


def test_6_overfit_one(verdict):
    cfg = RunConfig(steps=200, seed=0)
    sample = desk_sample()
    model = Localizer(cfg, sample.features.shape[1])
    weights = LossWeights(cfg.lambda1, cfg.lambda2)
    with tn.no_grad():
        initial = sample_loss(model, sample, weights)[0].item()
    t0 = time.perf_counter()
    train(model, [sample], cfg)
    elapsed = time.perf_counter() - t0
    with tn.no_grad():
        final = sample_loss(model, sample, weights)[0].item()
    pred, _ = model.predict(sample)
    iou = temporal_iou((pred.start, pred.end), (sample.start, sample.end))
    ok = final < 0.1 * initial and iou == 1.0 and elapsed < 120
    verdict(6, "overfit-one", ok,
            f"loss {initial:.3f} -> {final:.4f} (ratio {final / initial:.4f} < 0.1), IoU {iou:.2f}, {elapsed:.0f}s (< 120s)")


@pytest.fixture(scope="module")
def desk_split():
    gen = GenConfig()
    return generate(gen, "train"), generate(gen, "val")


@pytest.fixture(scope="module")
def full_run(desk_split):
    train_set, val_set = desk_split
    cfg = RunConfig(seed=0)
    model = Localizer(cfg, train_set[0].features.shape[1])
    t0 = time.perf_counter()
    train(model, train_set, cfg)
    elapsed = time.perf_counter() - t0
    return evaluate(model, val_set).report, elapsed


@pytest.mark.slow
def test_7_learning_sanity(verdict, desk_split, full_run):
    _, val_set = desk_split
    report, elapsed = full_run
    baseline = random_span_baseline(val_set, draws=200, seed=0)
    ok = report.miou >= 2 * baseline.miou and report.recall[0.5] >= 0.5 and elapsed < 900
    verdict(7, "learning sanity", ok,
            f"mIoU {report.miou:.3f} vs random {baseline.miou:.3f} (need >= {2 * baseline.miou:.3f}), "
            f"R@0.5 {report.recall[0.5]:.3f} (>= 0.5), train {elapsed:.0f}s (< 900s)")


@pytest.mark.slow
def test_8_ablation_ordering(verdict, desk_split, full_run):
    train_set, val_set = desk_split
    cfg = RunConfig(seed=0, motion_block="linear")
    model = Localizer(cfg, train_set[0].features.shape[1])
    train(model, train_set, cfg)
    fc = evaluate(model, val_set).report
    full = full_run[0]
    verdict(8, "ablation ordering", full.miou >= fc.miou,
            f"Full mIoU {full.miou:.3f} vs FC Trans mIoU {fc.miou:.3f}")


def test_9_determinism(verdict, tmp_path):
    gen = GenConfig(n_train=20, n_val=10)
    train_set, val_set = generate(gen, "train"), generate(gen, "val")
    cfg = RunConfig(steps=30, eval_every=10, seed=9, gen=gen)
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        report = train(Localizer(cfg, gen.d_v), train_set, cfg, val_set, out)
        blobs.append(((out / "checkpoint.bin").read_bytes(), report.to_text()))
    same_ckpt = blobs[0][0] == blobs[1][0]
    same_report = blobs[0][1] == blobs[1][1]
    verdict(9, "determinism", same_ckpt and same_report,
            f"checkpoints identical={same_ckpt} ({len(blobs[0][0])} bytes), reports identical={same_report}")
