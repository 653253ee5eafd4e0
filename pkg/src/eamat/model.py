"""The full two-branch localizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as tn
from .config import RunConfig
from .entity import EntityBranch, entity_forward
from .motion import BoundaryPrediction, MotionBranch, decode_boundaries, motion_forward
from .query import QueryEncoder, QueryFeatures, Vocabulary, load_lexicon
from .synth import GroundedSample
from .tensor import Tensor


@dataclass
class LocalizationOutput:
    relevance: Tensor
    start_scores: Tensor
    end_scores: Tensor
    inner: Tensor
    query: QueryFeatures


class Localizer(nn.Module):
    def __init__(self, config: RunConfig, d_v: int, lexicon: dict[str, str] | None = None):
        config.validate()
        self.config = config
        self.d_v = d_v
        rng = np.random.default_rng(config.seed)
        lexicon = load_lexicon(config.lexicon or None) if lexicon is None else lexicon
        d, h = config.d, config.heads
        common = dict(per_head_scaling=config.per_head_scaling, ffn_mult=config.ffn_mult)
        self.query = QueryEncoder(Vocabulary(lexicon, d, rng), d, h, rng, **common)
        self.fc2 = nn.Linear(d_v, d, rng)
        self.entity = EntityBranch(d, h, rng, config.early_blocks, config.late_blocks, **common)
        self.motion = MotionBranch(
            d, h, rng, config.motion_block,
            early=config.early_blocks, late=config.late_blocks, scales=config.scales,
            bidirectional=config.bidirectional, **common,
        )

    def __call__(self, sample: GroundedSample) -> LocalizationOutput:
        return self.forward(sample.features, sample.query)

    def forward(self, features: np.ndarray, query) -> LocalizationOutput:
        if features.shape[1] != self.d_v:
            raise tn.DimensionError(f"model expects d_v={self.d_v}, sample has {features.shape[1]}")
        f_v = Tensor(features)
        q = self.query(query)
        _, relevance = entity_forward(self.entity, self.fc2, f_v, q.F_q_entity)
        s_start, s_end, inner = motion_forward(self.motion, self.fc2, f_v, q.F_q_motion, relevance)
        return LocalizationOutput(relevance, s_start, s_end, inner, q)

    def predict(self, sample: GroundedSample) -> tuple[BoundaryPrediction, np.ndarray]:
        """Decoded span plus the relevance scores, without recording a graph."""
        with tn.no_grad():
            out = self(sample)
        pred = decode_boundaries(out.start_scores, out.end_scores, self.config.max_span or None)
        pred.p_inner = out.inner.data
        return pred, out.relevance.data
