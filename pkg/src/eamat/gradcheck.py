"""Central finite-difference checks for every differentiable block.

Each case builds a fresh block at width 8 with random inputs and reduces its
output to a scalar through a fixed random weighting. Analytic gradients of
every input and parameter are compared against central differences on a
random subset of coordinates (all coordinates for small tensors).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as tn
from .config import RunConfig
from .cqa import CqaLayer, cqa
from .entity import EntityBranch, entity_forward
from .model import Localizer
from .motion import MotionBranch, motion_forward
from .query import QuerySample, load_lexicon
from .synth import GroundedSample
from .tensor import Tensor
from .training import LossWeights, boundary_loss, inner_loss, sample_loss

STEP = 1e-5
TOLERANCE = 1e-4

Builder = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


@dataclass
class GradResult:
    name: str
    rel_error: float
    checked: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-4))


def numerical_grad(f: Callable[[], Tensor], p: Tensor, coords, h: float = STEP) -> np.ndarray:
    out = np.empty(len(coords))
    with tn.no_grad():
        for k, idx in enumerate(coords):
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = f().item()
            p.data[idx] = orig - h
            down = f().item()
            p.data[idx] = orig
            out[k] = (up - down) / (2 * h)
    return out


def check_gradients(f: Callable[[], Tensor], tensors: list[Tensor], rng: np.random.Generator,
                    max_coords: int = 10, h: float = STEP) -> tuple[float, int]:
    """Worst per-tensor relative error between analytic and numerical gradients."""
    for t in tensors:
        t.zero_grad()
    tn.backward(f())
    worst, checked = 0.0, 0
    for t in tensors:
        flat = list(np.ndindex(t.shape))
        if len(flat) > max_coords:
            flat = [flat[i] for i in rng.choice(len(flat), max_coords, replace=False)]
        analytic = np.array([t.grad[idx] for idx in flat])
        numeric = numerical_grad(f, t, flat, h)
        worst = max(worst, relative_error(analytic, numeric))
        checked += len(flat)
    return worst, checked


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * Tensor(w)).sum()


def _reduce(rng, shape):
    return rng.normal(size=shape)


def _inputs(rng, *shape) -> Tensor:
    return tn.parameter(rng.normal(size=shape))


D, T, N = 8, 7, 3
# composite cases use a single late block; every block kind has its own case
LATE = 1


def case_linear(rng):
    layer = nn.Linear(D, 5, rng)
    x = _inputs(rng, T, D)
    w = _reduce(rng, (T, 5))
    return (lambda: _weighted(layer(x), w)), [x, *layer.parameters()]


def case_layer_norm(rng):
    ln = nn.LayerNorm(D)
    ln.gain.data[:] = rng.normal(size=D)
    ln.bias.data[:] = rng.normal(size=D)
    x = _inputs(rng, T, D)
    w = _reduce(rng, (T, D))
    return (lambda: _weighted(ln(x), w)), [x, *ln.parameters()]


def case_softmax_matmul(rng):
    a = _inputs(rng, 2, T, 4)
    b = _inputs(rng, 2, 4, T)
    w = _reduce(rng, (2, T, T))
    return (lambda: _weighted(tn.softmax(a @ b, axis=-1), w)), [a, b]


def case_lstm_cell(rng):
    cell = nn.LstmCell(D, 4, rng)
    xs = [_inputs(rng, D) for _ in range(4)]
    w = _reduce(rng, (4, 4))

    def f():
        hs = nn.lstm_scan(cell, xs)
        return sum((h * Tensor(w[i])).sum() for i, h in enumerate(hs))

    return f, [*xs, *cell.parameters()]


def case_multiscale(scales, bidirectional=False):
    def build(rng):
        msl = nn.MultiScaleLstm(D, D, scales, rng, bidirectional)
        x = _inputs(rng, T, D)
        w = _reduce(rng, (T, D))
        return (lambda: _weighted(msl(x), w)), [x, *msl.parameters()]
    return build


def case_tconv(rng):
    proj = nn.TemporalConvProjection(D, 6, 1, rng)
    x = _inputs(rng, T, D)
    w = _reduce(rng, (T, 6))
    return (lambda: _weighted(proj(x)[0], w)), [x, *proj.parameters()]


def case_block(kind, scales=3, attention=True):
    def build(rng):
        d = 6 if kind == "tconv" else D
        block = nn.TransformerBlock(d, 2, rng, kind, scales=scales, attention=attention)
        x = _inputs(rng, T, d)
        w = _reduce(rng, (T, d))
        return (lambda: _weighted(block(x), w)), [x, *block.parameters()]
    return build


def case_cqa(rng):
    layer = CqaLayer(D, rng)
    fv = _inputs(rng, T, D)
    fq = _inputs(rng, N, D)
    w = _reduce(rng, (T, D))
    return (lambda: _weighted(cqa(layer, fv, fq), w)), [fv, fq, *layer.parameters()]


def case_entity(rng):
    fc2 = nn.Linear(5, D, rng)
    branch = EntityBranch(D, 2, rng, late=LATE)
    fv = _inputs(rng, T, 5)
    fq = _inputs(rng, N, D)
    w = _reduce(rng, T)
    return (lambda: _weighted(entity_forward(branch, fc2, fv, fq)[1], w)), [fv, fq, *fc2.parameters(), *branch.parameters()]


def case_motion(scales):
    def build(rng):
        fc2 = nn.Linear(5, D, rng)
        branch = MotionBranch(D, 2, rng, "lstm", scales=scales, late=LATE)
        fv = _inputs(rng, T, 5)
        fq = _inputs(rng, N, D)
        pe = tn.parameter(rng.uniform(0.1, 0.9, size=T))
        ws = [_reduce(rng, T) for _ in range(3)]

        def f():
            outs = motion_forward(branch, fc2, fv, fq, pe)
            return sum(_weighted(o, wi) for o, wi in zip(outs, ws))

        return f, [fv, fq, pe, *fc2.parameters(), *branch.parameters()]
    return build


def case_boundary_loss(rng):
    s = _inputs(rng, T)
    e = _inputs(rng, T)
    return (lambda: boundary_loss(s, e, 2, 5)), [s, e]


def case_inner_loss(rng):
    p = tn.parameter(rng.uniform(0.05, 0.95, size=T))
    y = (np.arange(T) >= 3).astype(float)
    return (lambda: inner_loss(p, y)), [p]


def case_end_to_end(rng):
    cfg = RunConfig(d=D, heads=2, scales=2, late_blocks=LATE, seed=int(rng.integers(1 << 30)))
    lexicon = load_lexicon()
    model = Localizer(cfg, 5, lexicon)
    query = QuerySample.from_tokens(["the", "person", "is", "watching"], lexicon)
    sample = GroundedSample(rng.normal(size=(T, 5)), query, 2, 4)
    weights = LossWeights(1.0, 10.0)
    return (lambda: sample_loss(model, sample, weights)[0]), model.parameters()


CASES: dict[str, Builder] = {
    "linear": case_linear,
    "layer_norm": case_layer_norm,
    "softmax_matmul": case_softmax_matmul,
    "lstm_cell": case_lstm_cell,
    "multiscale_lstm_S1": case_multiscale(1),
    "multiscale_lstm_S2": case_multiscale(2),
    "multiscale_lstm_S4": case_multiscale(4),
    "multiscale_lstm_bidir_S2": case_multiscale(2, bidirectional=True),
    "temporal_conv": case_tconv,
    "standard_block": case_block("linear"),
    "lstm_block_S1": case_block("lstm", 1),
    "lstm_block_S2": case_block("lstm", 2),
    "lstm_block_S4": case_block("lstm", 4),
    "tconv_block": case_block("tconv"),
    "lstm_only_block": case_block("lstm", 2, attention=False),
    "cqa": case_cqa,
    "entity_branch": case_entity,
    "motion_branch_S1": case_motion(1),
    "motion_branch_S2": case_motion(2),
    "motion_branch_S4": case_motion(4),
    "boundary_loss": case_boundary_loss,
    "inner_loss": case_inner_loss,
    "end_to_end": case_end_to_end,
}


def run_case(name: str, seed: int = 0, max_coords: int = 10) -> GradResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    t0 = time.perf_counter()
    f, tensors = CASES[name](rng)
    err, checked = check_gradients(f, tensors, rng, max_coords)
    return GradResult(name, err, checked, time.perf_counter() - t0)


def run_suite(seed: int = 0, names=None, max_coords: int = 10) -> list[GradResult]:
    return [run_case(n, seed, max_coords) for n in (names or CASES)]
