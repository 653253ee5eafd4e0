"""Context-query attention: fuse query word features into every frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as tn
from .tensor import DimensionError, Tensor


@dataclass
class CqaTrace:
    similarity: np.ndarray
    row_softmax: np.ndarray
    col_softmax: np.ndarray
    a_vq: np.ndarray
    a_qv: np.ndarray


class CqaLayer(nn.Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.fc3 = nn.Linear(4 * d, d, rng)
        self.last: CqaTrace | None = None

    def __call__(self, f_v: Tensor, f_q: Tensor, query_mask: np.ndarray | None = None) -> Tensor:
        return cqa(self, f_v, f_q, query_mask)


def cqa(layer: CqaLayer, f_v: Tensor, f_q: Tensor, query_mask: np.ndarray | None = None) -> Tensor:
    """Frame-side output of context-query attention, shape (T, d).

    ``query_mask`` marks real (True) versus padded (False) query rows; padded
    words are excluded from the per-frame softmax over words.
    """
    if f_v.shape[1] != f_q.shape[1]:
        raise DimensionError(f"CQA width mismatch: frames {f_v.shape} vs query {f_q.shape}")
    s = f_v @ f_q.T
    row_mask = None
    if query_mask is not None:
        row_mask = np.where(np.asarray(query_mask, dtype=bool), 0.0, -np.inf)[None, :]
    s_r = tn.softmax(s, axis=1, mask_add=row_mask)
    s_c = tn.softmax(s, axis=0)
    a_vq = s_r @ f_q
    a_qv = s_r @ (s_c.T @ f_v)
    layer.last = CqaTrace(s.data, s_r.data, s_c.data, a_vq.data, a_qv.data)
    fused = tn.concat([f_v, a_vq, f_v * a_vq, f_v * a_qv], axis=1)
    return layer.fc3(fused)
