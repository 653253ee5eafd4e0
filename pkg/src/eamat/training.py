"""Losses, Adam with linear decay, the training loop and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .config import RunConfig
from .metrics import THRESHOLDS, evaluate
from .model import Localizer
from .query import InputError
from .tensor import Tensor

log = logging.getLogger(__name__)

BCE_CLAMP = 1e-7


@dataclass
class LossWeights:
    boundary: float = 1.0
    inner: float = 10.0


def boundary_loss(start_scores: Tensor, end_scores: Tensor, start: int, end: int) -> Tensor:
    """Cross-entropy of the start and end softmax distributions at the true frames."""
    T = start_scores.shape[0]
    if not (0 <= start < T and 0 <= end < T):
        raise InputError(f"boundary indices ({start}, {end}) out of range for {T} frames")
    return -(tn.log_softmax(start_scores)[start] + tn.log_softmax(end_scores)[end])


def inner_loss(p_inner: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    target = np.asarray(target, dtype=float)
    if target.shape != p_inner.shape:
        raise InputError(f"inner target shape {target.shape} does not match {p_inner.shape}")
    p = tn.clip(p_inner, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = Tensor(target)
    ll = y * tn.log(p) + (1.0 - y) * tn.log(1.0 - p)
    return -tn.mean(ll)


def total_loss(weights: LossWeights, boundary, inner):
    return weights.boundary * boundary + weights.inner * inner


def inner_targets(T: int, start: int, end: int) -> np.ndarray:
    y = np.zeros(T)
    y[start : end + 1] = 1.0
    return y


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam whose learning rate decays linearly to zero over ``total_steps``."""

    def __init__(self, params: Sequence[Tensor], lr: float = 5e-4, total_steps: int = 1,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, clip_norm: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.total_steps = max(1, total_steps)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self) -> float:
        return self.lr * max(0.0, 1.0 - self.t / self.total_steps)

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in self.params))

    def step(self) -> float:
        """Apply one update and zero the gradients; returns the learning rate used."""
        lr = self.current_lr()
        scale = 1.0
        if self.clip_norm > 0:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr > 0:
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()
        return lr


def adam_step(state: Adam) -> float:
    return state.step()


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainingReport:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "step", "lr", "loss", "val_mIoU", "val_R@0.3", "val_R@0.5", "val_R@0.7")

    def add(self, epoch, step, lr, loss, metrics=None):
        row = {"epoch": epoch, "step": step, "lr": lr, "loss": loss}
        for t in THRESHOLDS:
            row[f"val_R@{t}"] = metrics.recall[t] if metrics else float("nan")
        row["val_mIoU"] = metrics.miou if metrics else float("nan")
        self.rows.append(row)

    def to_text(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for r in self.rows:
            lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in self.COLUMNS))
        return "\n".join(lines) + "\n"

    @property
    def final_loss(self) -> float:
        return self.rows[-1]["loss"] if self.rows else float("nan")


class NonFiniteError(FloatingPointError):
    pass


def sample_loss(model: Localizer, sample, weights: LossWeights, aux_relevance: bool = False):
    out = model(sample)
    lb = boundary_loss(out.start_scores, out.end_scores, sample.start, sample.end)
    y = inner_targets(sample.T, sample.start, sample.end)
    li = inner_loss(out.inner, y)
    loss = total_loss(weights, lb, li)
    if aux_relevance:
        loss = loss + inner_loss(out.relevance, y)
    return loss, out


def _first_non_finite(model: Localizer, out) -> str | None:
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.data)):
            return name
    for name in ("relevance", "start_scores", "end_scores", "inner"):
        if not tn.is_finite(getattr(out, name)):
            return name
    return None


def train(
    model: Localizer,
    dataset: Sequence,
    config: RunConfig,
    val_set: Sequence | None = None,
    out_dir: str | Path | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainingReport:
    """Batch-1 training for ``config.steps`` updates, cycling shuffled epochs."""
    params = model.parameters()
    opt = Adam(params, config.lr, config.steps, clip_norm=config.clip_norm)
    weights = LossWeights(config.lambda1, config.lambda2)
    report = TrainingReport()
    order_rng = np.random.default_rng([config.seed, 1])
    n = len(dataset)
    out_dir = Path(out_dir) if out_dir else None

    def validate():
        return evaluate(model, val_set).report if val_set else None

    report.add(0, 0, opt.current_lr(), float("nan"), validate())
    if config.steps == 0 or n == 0:
        if out_dir:
            save_checkpoint(model, out_dir / "checkpoint.bin")
        return report

    epoch, step, running, count = 0, 0, 0.0, 0
    order: list[int] = []
    while step < config.steps:
        if not order:
            epoch += 1
            order = list(order_rng.permutation(n))
        sample = dataset[order.pop(0)]
        loss, out = sample_loss(model, sample, weights, config.aux_relevance)
        value = loss.item()
        if not math.isfinite(value):
            culprit = _first_non_finite(model, out) or "loss"
            raise NonFiniteError(f"non-finite loss at step {step + 1}; first non-finite tensor: {culprit}")
        tn.backward(loss)
        lr = opt.step()
        step += 1
        running += value
        count += 1
        end_of_epoch = not order
        due = config.eval_every and step % config.eval_every == 0
        if end_of_epoch or due or step == config.steps:
            report.add(epoch, step, lr, running / count, validate())
            running, count = 0.0, 0
            if progress:
                progress(report.rows[-1])
        if out_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(model, out_dir / f"checkpoint_{step:06d}.bin")
    if out_dir:
        save_checkpoint(model, out_dir / "checkpoint.bin")
    return report


# ---------------------------------------------------------------------------
# checkpoints: magic, version, JSON header, then (name, shape, <f8 bytes) records

MAGIC = b"EAMATCKP"
CKPT_VERSION = 1


def save_checkpoint(model: Localizer, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # the output location is not part of the model; leaving it out keeps
    # checkpoints of identical runs byte-identical wherever they are written
    config = replace(model.config, out_dir=RunConfig.out_dir)
    header = json.dumps(
        {"config": config.to_dict(), "d_v": model.d_v, "lexicon": model.query.vocab.lexicon},
        sort_keys=True,
    ).encode("utf-8")
    named = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(named)))
        for name, p in named:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> Localizer:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise InputError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise InputError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        model = Localizer(RunConfig.from_dict(header["config"]), header["d_v"], header["lexicon"])
        params = dict(model.named_parameters())
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            data = np.frombuffer(fh.read(8 * int(np.prod(shape))), dtype="<f8").reshape(shape)
            if name not in params or params[name].shape != tuple(shape):
                raise InputError(f"{path}: parameter {name} {shape} does not fit the model")
            params[name].data = data.astype(np.float64).copy()
    return model
