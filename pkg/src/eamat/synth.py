"""Synthetic grounded samples with planted entity and motion signals.

Each vocabulary word used by the generator owns one feature channel. The
query's entity words light up their channels over an entity region that
contains the action span; the query's motion word steps up at the span start
and back down after the span end. Distractor words of both kinds are planted
elsewhere, and the remaining channels carry pure Gaussian noise.

Planted channels use noise truncated to +/-1.5 sigma so that, for sigma <=
0.1, the motion channel's first difference exceeds 3 sigma exactly at the
two boundary frames.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .nn import ConfigError
from .query import ENTITY, MOTION, InputError, QuerySample, load_lexicon, one_hot

FORMAT = "eamat-dataset"
VERSION = 1
SPLITS = {"train": 0, "val": 1, "test": 2}


@dataclass
class GenConfig:
    seed: int = 0
    t_min: int = 16
    t_max: int = 32
    n_entity_words: int = 8
    n_motion_words: int = 6
    n_noise_channels: int = 8
    entities_per_query: int = 2
    span_mean: int = 8
    span_spread: int = 4
    entity_slack: int = 4
    noise: float = 0.1
    distractor_entities: int = 1
    distractor_motions: int = 1
    n_train: int = 1000
    n_val: int = 200
    n_test: int = 200

    @property
    def d_v(self) -> int:
        return self.n_entity_words + self.n_motion_words + self.n_noise_channels

    def validate(self) -> None:
        if self.t_min < 4 or self.t_max < self.t_min:
            raise ConfigError(f"need 4 <= t_min <= t_max, got {self.t_min}, {self.t_max}")
        lo = self.span_mean - self.span_spread
        if lo < 1 or self.span_spread < 0:
            raise ConfigError("span lengths must be at least 1 frame")
        if self.span_mean + self.span_spread > self.t_min:
            raise ConfigError(
                f"span up to {self.span_mean + self.span_spread} frames does not fit t_min={self.t_min}"
            )
        if not 1 <= self.entities_per_query <= self.n_entity_words - self.distractor_entities:
            raise ConfigError("not enough entity words for the query plus distractors")
        if self.n_motion_words < 1 + self.distractor_motions:
            raise ConfigError("not enough motion words for the query plus distractors")
        if self.noise < 0:
            raise ConfigError("noise must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class GroundedSample:
    features: np.ndarray
    query: QuerySample
    start: int
    end: int
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def inner(self) -> np.ndarray:
        y = np.zeros(self.T)
        y[self.start : self.end + 1] = 1.0
        return y


def vocabulary_words(config: GenConfig, lexicon: dict[str, str] | None = None) -> tuple[list[str], list[str]]:
    lexicon = load_lexicon() if lexicon is None else lexicon
    ent = [w for w, c in lexicon.items() if c == ENTITY][: config.n_entity_words]
    mot = [w for w, c in lexicon.items() if c == MOTION][: config.n_motion_words]
    if len(ent) < config.n_entity_words or len(mot) < config.n_motion_words:
        raise ConfigError("lexicon has too few entity or motion words for this config")
    return ent, mot


def _truncated(rng: np.random.Generator, sigma: float, size) -> np.ndarray:
    return np.clip(rng.normal(0.0, sigma, size=size), -1.5 * sigma, 1.5 * sigma)


def _random_span(rng: np.random.Generator, T: int, lo: int, hi: int) -> tuple[int, int]:
    length = int(rng.integers(lo, hi + 1))
    s = int(rng.integers(0, T - length + 1))
    return s, s + length - 1


def make_sample(config: GenConfig, rng: np.random.Generator, ent_words: list[str], mot_words: list[str]) -> GroundedSample:
    ne, nm = len(ent_words), len(mot_words)
    T = int(rng.integers(config.t_min, config.t_max + 1))
    sigma = config.noise
    start, end = _random_span(rng, T, config.span_mean - config.span_spread, config.span_mean + config.span_spread)
    region = (
        max(0, start - int(rng.integers(0, config.entity_slack + 1))),
        min(T - 1, end + int(rng.integers(0, config.entity_slack + 1))),
    )

    ent_perm = rng.permutation(ne)
    k = config.entities_per_query
    query_ents = [int(i) for i in ent_perm[:k]]
    distract_ents = [int(i) for i in ent_perm[k : k + config.distractor_entities]]
    mot_perm = rng.permutation(nm)
    motion = int(mot_perm[0])
    distract_mots = [int(i) for i in mot_perm[1 : 1 + config.distractor_motions]]

    feats = np.zeros((T, config.d_v))
    planted = ne + nm
    feats[:, :planted] = _truncated(rng, sigma, (T, planted))
    feats[:, planted:] = rng.normal(0.0, sigma, size=(T, config.n_noise_channels))
    for c in query_ents:
        feats[region[0] : region[1] + 1, c] += 1.0
    feats[start : end + 1, ne + motion] += 1.0
    for c in distract_ents:
        a, b = _random_span(rng, T, 1, T)
        feats[a : b + 1, c] += 1.0
    for c in distract_mots:
        a, b = _random_span(rng, T, config.span_mean - config.span_spread, config.span_mean + config.span_spread)
        feats[a : b + 1, ne + c] += 1.0

    tokens = [str(rng.choice(["a", "the"])), ent_words[query_ents[0]], "is", mot_words[motion]]
    for c in query_ents[1:]:
        tokens += [str(rng.choice(["a", "the"])), ent_words[c]]
    classes = [ENTITY if t in ent_words else MOTION if t in mot_words else "other" for t in tokens]
    query = QuerySample(tokens, np.array([one_hot(c) for c in classes]))
    meta = {
        "entity_channels": query_ents,
        "motion_channel": ne + motion,
        "entity_region": list(region),
    }
    return GroundedSample(feats, query, start, end, meta)


def generate(config: GenConfig, split: str = "train", count: int | None = None, lexicon: dict[str, str] | None = None) -> list[GroundedSample]:
    """Deterministic samples for one split; sample i of split k is drawn from seed (seed, k, i)."""
    config.validate()
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    if count is None:
        count = getattr(config, f"n_{split}")
    ent, mot = vocabulary_words(config, lexicon)
    sid = SPLITS[split]
    return [
        make_sample(config, np.random.default_rng([config.seed, sid, i]), ent, mot)
        for i in range(count)
    ]


# ---------------------------------------------------------------------------
# dataset files: a JSON header line followed by one JSON record per line


def _record(s: GroundedSample) -> dict:
    return {
        "tokens": s.query.tokens,
        "tags": s.query.classes,
        "T": s.T,
        "d_v": s.features.shape[1],
        "features": s.features.reshape(-1).tolist(),
        "start": s.start,
        "end": s.end,
        "meta": s.meta,
    }


def write_dataset(path: str | Path, samples: Iterable[GroundedSample], config: GenConfig | None = None, split: str = "") -> None:
    header = {"format": FORMAT, "version": VERSION, "split": split,
              "gen_config": asdict(config) if config else None}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in samples:
            fh.write(json.dumps(_record(s), sort_keys=True) + "\n")


def _parse(rec: dict, lineno: int) -> GroundedSample:
    try:
        T, d_v = int(rec["T"]), int(rec["d_v"])
        feats = np.array(rec["features"], dtype=float)
        if feats.size != T * d_v:
            raise InputError(f"line {lineno}: {feats.size} feature values for T={T}, d_v={d_v}")
        query = QuerySample(list(rec["tokens"]), np.array([one_hot(c) for c in rec["tags"]]))
        start, end = int(rec["start"]), int(rec["end"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"line {lineno}: malformed record ({exc})") from None
    if not 0 <= start <= end <= T - 1:
        raise InputError(f"line {lineno}: span ({start}, {end}) outside [0, {T - 1}]")
    return GroundedSample(feats.reshape(T, d_v), query, start, end, rec.get("meta", {}))


def iter_dataset(path: str | Path) -> Iterator[GroundedSample]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline() or "{}")
        if header.get("format") != FORMAT:
            raise InputError(f"{path}: not an {FORMAT} file")
        for lineno, line in enumerate(fh, 2):
            if line.strip():
                yield _parse(json.loads(line), lineno)


def read_dataset(path: str | Path) -> list[GroundedSample]:
    return list(iter_dataset(path))


def read_header(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.loads(fh.readline())


def seconds_to_index(t: float, duration: float, T: int) -> int:
    """Map a time in seconds onto a frame index, clamped to [0, T-1]."""
    return int(min(max(round(t / duration * (T - 1)), 0), T - 1))
