"""Motion-aware branch: relevance-gated fusion with motion queries, boundary
and inner-probability heads, and joint boundary decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as tn
from .cqa import CqaLayer
from .tensor import DimensionError, Tensor

# name -> (projection kind, keeps self-attention)
MOTION_VARIANTS = {
    "lstm": ("lstm", True),
    "linear": ("linear", True),
    "tconv": ("tconv", True),
    "tconv_only": ("tconv", False),
    "lstm_only": ("lstm", False),
}


class MotionBranch(nn.Module):
    def __init__(
        self,
        d: int,
        heads: int,
        rng: np.random.Generator,
        variant: str = "lstm",
        *,
        early: int = 1,
        late: int = 3,
        scales: int = 3,
        per_head_scaling: bool = False,
        bidirectional: bool = False,
        ffn_mult: int = 2,
    ):
        if variant not in MOTION_VARIANTS:
            raise nn.ConfigError(f"unknown motion variant {variant!r}; expected one of {sorted(MOTION_VARIANTS)}")
        kind, attention = MOTION_VARIANTS[variant]
        self.variant = variant

        def block():
            return nn.TransformerBlock(
                d, heads, rng, kind,
                attention=attention, scales=scales, per_head_scaling=per_head_scaling,
                bidirectional=bidirectional, ffn_mult=ffn_mult,
            )

        self.early = [block() for _ in range(early)]
        self.cqa = CqaLayer(d, rng)
        self.late = [block() for _ in range(late)]
        self.fc6 = nn.Linear(d, d // 2, rng)
        self.fc7 = nn.Linear(d // 2, 1, rng)
        self.fc8 = nn.Linear(d, d // 2, rng)
        self.fc9 = nn.Linear(d // 2, 1, rng)
        self.fc_a = nn.Linear(d, d // 2, rng)
        self.fc_b = nn.Linear(d // 2, 1, rng)

    def __call__(self, fc2: nn.Linear, f_v: Tensor, f_q_motion: Tensor, relevance: Tensor):
        return motion_forward(self, fc2, f_v, f_q_motion, relevance)


def motion_forward(branch: MotionBranch, fc2: nn.Linear, f_v: Tensor, f_q_motion: Tensor, relevance: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Returns start scores, end scores and inner probabilities, each of length T."""
    T = f_v.shape[0]
    if relevance.shape != (T,):
        raise DimensionError(f"relevance scores of shape {relevance.shape} do not match {T} frames")
    f_vm = nn.stack(branch.early, fc2(f_v))
    gated = f_vm * relevance.reshape(T, 1)
    fused = nn.stack(branch.late, branch.cqa(gated, f_q_motion))
    s_start = branch.fc7(tn.relu(branch.fc6(fused))).reshape(T)
    s_end = branch.fc9(tn.relu(branch.fc8(fused))).reshape(T)
    p_in = tn.sigmoid(branch.fc_b(tn.relu(branch.fc_a(fused)))).reshape(T)
    return s_start, s_end, p_in


@dataclass
class BoundaryPrediction:
    p_start: np.ndarray
    p_end: np.ndarray
    start: int
    end: int
    score: float
    p_inner: np.ndarray | None = None

    def to_line(self, with_dists: bool = False) -> str:
        line = f"{self.start}\t{self.end}\t{self.score!r}"
        if with_dists:
            line += "\t" + ",".join(repr(float(v)) for v in self.p_start)
            line += "\t" + ",".join(repr(float(v)) for v in self.p_end)
        return line


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def best_pair(p_start: np.ndarray, p_end: np.ndarray, max_span: int | None = None) -> tuple[int, int, float]:
    """Argmax of ``p_start[s] * p_end[e]`` over ``s <= e``.

    Ties go to the smallest start, then the smallest end: the row-major
    first maximum of the masked outer product.
    """
    T = len(p_start)
    joint = np.outer(p_start, p_end)
    s_idx, e_idx = np.indices((T, T))
    valid = e_idx >= s_idx
    if max_span:
        valid &= e_idx - s_idx < max_span
    joint = np.where(valid, joint, -1.0)
    flat = int(np.argmax(joint))
    s, e = divmod(flat, T)
    return s, e, float(joint[s, e])


def decode_boundaries(s_start, s_end, max_span: int | None = None) -> BoundaryPrediction:
    s_start = np.asarray(getattr(s_start, "data", s_start), dtype=float)
    s_end = np.asarray(getattr(s_end, "data", s_end), dtype=float)
    p_s, p_e = _softmax(s_start), _softmax(s_end)
    s, e, score = best_pair(p_s, p_e, max_span)
    return BoundaryPrediction(p_s, p_e, s, e, score)
