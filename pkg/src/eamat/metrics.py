"""Temporal IoU, recall at IoU thresholds, and model evaluation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .motion import BoundaryPrediction
from .query import InputError

THRESHOLDS = (0.3, 0.5, 0.7)


def temporal_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """IoU of frame spans read as half-open intervals ``[s, e + 1)``."""
    (s1, e1), (s2, e2) = a, b
    if s1 > e1 or s2 > e2:
        raise InputError(f"span start after end: {a}, {b}")
    inter = max(0, min(e1, e2) + 1 - max(s1, s2))
    union = (e1 - s1 + 1) + (e2 - s2 + 1) - inter
    return inter / union


@dataclass
class MetricReport:
    recall: dict[float, float]
    miou: float
    count: int
    ious: list[float] = field(default_factory=list, repr=False)

    def row(self, thresholds: Sequence[float] = THRESHOLDS) -> list[float]:
        return [self.recall[t] for t in thresholds] + [self.miou]

    def summary(self) -> str:
        parts = [f"R@1,IoU={t}: {r:.4f}" for t, r in self.recall.items()]
        return "  ".join(parts + [f"mIoU: {self.miou:.4f}", f"n={self.count}"])


def metric_report(pred_spans, gt_spans, thresholds: Sequence[float] = THRESHOLDS) -> MetricReport:
    """R@1 counts samples whose IoU is strictly larger than each threshold."""
    pred_spans, gt_spans = list(pred_spans), list(gt_spans)
    if not gt_spans:
        raise InputError("cannot evaluate an empty dataset")
    if len(pred_spans) != len(gt_spans):
        raise InputError("prediction and ground-truth counts differ")
    ious = [temporal_iou(p, g) for p, g in zip(pred_spans, gt_spans)]
    n = len(ious)
    recall = {float(t): sum(iou > t for iou in ious) / n for t in thresholds}
    return MetricReport(recall, float(np.mean(ious)), n, ious)


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("EAMAT_THREADS", "1")))
    except ValueError:
        return 1


def predict_all(predict: Callable, samples: Sequence, threads: int | None = None) -> list:
    threads = eval_threads() if threads is None else threads
    if threads <= 1 or len(samples) < 2:
        return [predict(s) for s in samples]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(predict, samples))


@dataclass
class Evaluation:
    report: MetricReport
    predictions: list[BoundaryPrediction]
    relevance: list[np.ndarray]


def evaluate(model, samples: Sequence, thresholds: Sequence[float] = THRESHOLDS, threads: int | None = None) -> Evaluation:
    if not samples:
        raise InputError("cannot evaluate an empty dataset")
    results = predict_all(model.predict, samples, threads)
    preds = [p for p, _ in results]
    report = metric_report([(p.start, p.end) for p in preds], [(s.start, s.end) for s in samples], thresholds)
    return Evaluation(report, preds, [r for _, r in results])


def random_span_baseline(samples: Sequence, draws: int = 200, seed: int = 0, thresholds: Sequence[float] = THRESHOLDS) -> MetricReport:
    """Monte Carlo metrics of a predictor drawing uniformly among valid spans."""
    rng = np.random.default_rng(seed)
    preds, gts = [], []
    for s in samples:
        pairs = [(a, b) for a in range(s.T) for b in range(a, s.T)]
        for k in rng.integers(0, len(pairs), size=draws):
            preds.append(pairs[k])
            gts.append((s.start, s.end))
    return metric_report(preds, gts, thresholds)


def format_relevance(scores: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in scores)
