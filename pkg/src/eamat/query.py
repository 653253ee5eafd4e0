"""Query tagging and entity/motion query features."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from . import nn
from . import tensor as tn
from .tensor import Tensor

ENTITY, MOTION, OTHER = "entity", "motion", "other"
CLASSES = (ENTITY, MOTION, OTHER)
UNK = "<unk>"


class InputError(ValueError):
    """Raised for malformed samples or files."""


def load_lexicon(path: str | Path | None = None) -> dict[str, str]:
    """Read ``word<TAB>class`` lines; the shipped lexicon is used when ``path`` is None."""
    if path is None:
        text = resources.files("eamat").joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    lexicon: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            word, cls = line.split("\t")
        except ValueError:
            raise InputError(f"lexicon line {lineno}: expected 'word<TAB>class', got {line!r}") from None
        if cls not in CLASSES:
            raise InputError(f"lexicon line {lineno}: unknown class {cls!r}")
        lexicon[word] = cls
    return lexicon


def one_hot(cls: str) -> np.ndarray:
    v = np.zeros(3)
    v[CLASSES.index(cls)] = 1.0
    return v


def tag_tokens(tokens: Iterable[str], lexicon: dict[str, str]) -> np.ndarray:
    """One-hot [entity, motion, other] rows by lexicon lookup; unknown words are ``other``."""
    rows = [one_hot(lexicon.get(tok.lower(), OTHER)) for tok in tokens]
    return np.array(rows).reshape(-1, 3)


@dataclass
class QuerySample:
    tokens: list[str]
    class_probs: np.ndarray

    def __post_init__(self):
        self.class_probs = np.asarray(self.class_probs, dtype=float).reshape(-1, 3)
        if len(self.tokens) != len(self.class_probs):
            raise InputError("tokens and class_probs differ in length")

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], lexicon: dict[str, str]) -> "QuerySample":
        tokens = list(tokens)
        return cls(tokens, tag_tokens(tokens, lexicon))

    @property
    def classes(self) -> list[str]:
        return [CLASSES[int(i)] for i in self.class_probs.argmax(axis=1)]

    def to_tagged(self) -> str:
        return " ".join(f"{t}/{c}" for t, c in zip(self.tokens, self.classes))

    @classmethod
    def from_tagged(cls, line: str) -> "QuerySample":
        tokens, probs = [], []
        for pair in line.split():
            word, sep, tag = pair.rpartition("/")
            if not sep or tag not in CLASSES or not word:
                raise InputError(f"bad token/class pair {pair!r}")
            tokens.append(word)
            probs.append(one_hot(tag))
        return cls(tokens, np.array(probs).reshape(-1, 3))


def read_tagged_queries(path: str | Path) -> list[QuerySample]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [QuerySample.from_tagged(line) for line in lines if line.strip()]


class Vocabulary(nn.Module):
    """Word index over a lexicon with a learned embedding table. Index 0 is UNK."""

    def __init__(self, lexicon: dict[str, str], d_w: int, rng: np.random.Generator):
        self.lexicon = dict(lexicon)
        self.words = [UNK] + sorted(lexicon)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.embedding = tn.parameter(rng.uniform(-0.1, 0.1, size=(len(self.words), d_w)))

    def lookup(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.index.get(t.lower(), 0) for t in tokens], dtype=np.int64)

    def embed(self, tokens: Iterable[str]) -> Tensor:
        return self.embedding[self.lookup(tokens)]


@dataclass
class QueryFeatures:
    F_q: Tensor
    F_q_entity: Tensor
    F_q_motion: Tensor


class QueryEncoder(nn.Module):
    """Embedding + positional encoding -> FC -> one standard Transformer block."""

    def __init__(self, vocab: Vocabulary, d: int, heads: int, rng: np.random.Generator, per_head_scaling: bool = False, ffn_mult: int = 2):
        self.vocab = vocab
        d_w = vocab.embedding.shape[1]
        self.fc1 = nn.Linear(d_w, d, rng)
        self.block = nn.TransformerBlock(d, heads, rng, "linear", per_head_scaling=per_head_scaling, ffn_mult=ffn_mult)

    def __call__(self, sample: QuerySample) -> QueryFeatures:
        return encode_query(self, sample)


def encode_query(enc: QueryEncoder, sample: QuerySample) -> QueryFeatures:
    N = len(sample.tokens)
    if N == 0:
        raise InputError("query has no tokens")
    emb = enc.vocab.embed(sample.tokens)
    q = emb + nn.positional_encoding(N, emb.shape[1])
    f_q = enc.block(enc.fc1(q))
    p = sample.class_probs
    ent_mask = Tensor((p[:, 0] + p[:, 2]).reshape(N, 1))
    mot_mask = Tensor((p[:, 1] + p[:, 2]).reshape(N, 1))
    return QueryFeatures(f_q, f_q * ent_mask, f_q * mot_mask)
