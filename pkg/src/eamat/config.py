"""Run configuration: model, loss, optimizer, data and output knobs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .motion import MOTION_VARIANTS
from .nn import ConfigError
from .synth import GenConfig


@dataclass
class RunConfig:
    # model
    d: int = 60
    d_v: int = 0  # 0: taken from the dataset
    heads: int = 4
    scales: int = 3
    early_blocks: int = 1
    late_blocks: int = 3
    motion_block: str = "lstm"
    ffn_mult: int = 2
    per_head_scaling: bool = False
    bidirectional: bool = False
    # loss
    lambda1: float = 1.0
    lambda2: float = 10.0
    aux_relevance: bool = False
    # optimization
    lr: float = 5e-4
    steps: int = 2000
    clip_norm: float = 5.0  # 0 disables clipping
    seed: int = 0
    # decoding
    max_span: int = 0  # 0: unconstrained
    # bookkeeping
    eval_every: int = 0  # 0: once per epoch
    checkpoint_every: int = 0  # 0: final checkpoint only
    lexicon: str = ""
    train_data: str = ""
    val_data: str = ""
    test_data: str = ""
    out_dir: str = "runs"
    gen: GenConfig = field(default_factory=GenConfig)

    def validate(self) -> "RunConfig":
        if self.d % 2:
            raise ConfigError(f"d must be even, got {self.d}")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d={self.d}")
        if self.motion_block not in MOTION_VARIANTS:
            raise ConfigError(f"motion_block must be one of {sorted(MOTION_VARIANTS)}")
        kind = MOTION_VARIANTS[self.motion_block][0]
        parts = self.scales * (2 if self.bidirectional else 1)
        if kind == "lstm" and (self.scales < 1 or self.d % parts):
            raise ConfigError(f"scales={self.scales} (bidirectional={self.bidirectional}) must divide d={self.d}")
        if kind == "tconv" and self.d % 3:
            raise ConfigError(f"temporal-conv projections need d divisible by 3, got {self.d}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lr < 0 or self.steps < 0:
            raise ConfigError("lr and steps must be nonnegative")
        if self.early_blocks < 0 or self.late_blocks < 0:
            raise ConfigError("block counts must be nonnegative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        gen = GenConfig.from_dict(d.pop("gen", None) or {})
        names = {f.name for f in fields(cls)}
        return cls(gen=gen, **{k: v for k, v in d.items() if k in names})

    def with_overrides(self, pairs: dict[str, str]) -> "RunConfig":
        cfg = replace(self, gen=replace(self.gen))
        for key, raw in pairs.items():
            target, name = (cfg.gen, key[4:]) if key.startswith("gen.") else (cfg, key)
            if name == "gen" or name not in {f.name for f in fields(target)}:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(target, name, _coerce(getattr(target, name), raw, key))
        return cfg


def _coerce(current, raw: str, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def parse_kv(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        out[key.strip()] = val.strip()
    return out


PRESETS = {
    "desk": {},
    # nearest width to 512 divisible by 3 scales, 8 heads and 3 conv kernels
    "paper": {"d": "504", "heads": "8", "scales": "3", "early_blocks": "1", "late_blocks": "3"},
}


def load_config(path: str | Path | None = None, preset: str = "desk", overrides: dict[str, str] | None = None) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    cfg = RunConfig().with_overrides(PRESETS[preset])
    if path is not None:
        cfg = cfg.with_overrides(parse_kv(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()


def dump_kv(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        if f.name == "gen":
            continue
        lines.append(f"{f.name}={getattr(cfg, f.name)}")
    for f in fields(cfg.gen):
        lines.append(f"gen.{f.name}={getattr(cfg.gen, f.name)}")
    return "\n".join(lines) + "\n"
