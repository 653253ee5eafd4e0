"""Entity-aware branch: cross-frame blocks around entity-query fusion and a
per-frame action-relevance head."""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as tn
from .cqa import CqaLayer
from .tensor import Tensor


class EntityBranch(nn.Module):
    """No positional information enters this branch, so the pre-fusion stack
    is equivariant to frame permutations.

    ``fc2`` is owned by the enclosing model and shared with the motion branch;
    it is passed in at call time rather than stored here.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, early: int = 1, late: int = 3, per_head_scaling: bool = False, ffn_mult: int = 2):
        def block():
            return nn.TransformerBlock(d, heads, rng, "linear", per_head_scaling=per_head_scaling, ffn_mult=ffn_mult)

        self.early = [block() for _ in range(early)]
        self.cqa = CqaLayer(d, rng)
        self.late = [block() for _ in range(late)]
        self.fc4 = nn.Linear(d, d // 2, rng)
        self.fc5 = nn.Linear(d // 2, 1, rng)

    def encode_frames(self, fc2: nn.Linear, f_v: Tensor) -> Tensor:
        return nn.stack(self.early, fc2(f_v))

    def __call__(self, fc2: nn.Linear, f_v: Tensor, f_q_entity: Tensor) -> tuple[Tensor, Tensor]:
        return entity_forward(self, fc2, f_v, f_q_entity)


def entity_forward(branch: EntityBranch, fc2: nn.Linear, f_v: Tensor, f_q_entity: Tensor) -> tuple[Tensor, Tensor]:
    """Returns (entity-aware frame features (T, d), relevance scores (T,))."""
    f_ve = branch.encode_frames(fc2, f_v)
    fused = nn.stack(branch.late, branch.cqa(f_ve, f_q_entity))
    logits = branch.fc5(tn.relu(branch.fc4(fused)))
    return fused, tn.sigmoid(logits).reshape(f_v.shape[0])
