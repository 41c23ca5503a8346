"""Flat key=value run configuration shared by every command."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .featurize import FeaturizerSpec, default_image_kind
from .model import DEFAULT_MAX_LEN, ModelConfig


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    seed: int = 0
    eval_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.eval_fraction < 1:
            raise ConfigError("eval_fraction must lie in [0, 1)")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")


@dataclass
class RunConfig:
    mode: str = "gene_aware"
    d_fuse: int = 256
    layers: int = 2
    heads: int = 8
    max_len: int = 0
    seed: int = 0
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_fraction: float = 0.1
    gene_featurizer: str = "hashed_text"
    gene_dim: int = 64
    gene_buckets: int = 8192
    gene_trainable: bool = False
    gene_source: str = ""
    gene_text: str = "description"
    img_featurizer: str = "auto"
    img_dim: int = 32
    img_trainable: bool = False
    img_source: str = ""
    coord_embed: bool = False
    coord_max: int = 256
    hvg_k: int = 0
    min_spots: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.model_config(1, 1)
        self.train_config()
        self.gene_spec()
        if self.img_featurizer != "auto":
            FeaturizerSpec(self.img_featurizer, source=self.img_source or None)
        if self.hvg_k < 0 or self.min_spots < 0:
            raise ConfigError("hvg_k and min_spots must be >= 0")

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def model_config(self, img_in_dim: int, gene_in_dim: int) -> ModelConfig:
        if self.mode not in DEFAULT_MAX_LEN:
            raise ConfigError(f"unknown mode {self.mode!r}")
        return ModelConfig(
            mode=self.mode, d_fuse=self.d_fuse, layers=self.layers, heads=self.heads,
            max_len=self.max_len or None, img_in_dim=img_in_dim, gene_in_dim=gene_in_dim,
            seed=self.seed, coord_embed=self.coord_embed, coord_max=self.coord_max,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.seed, self.eval_fraction,
                           self.beta1, self.beta2, self.adam_eps)

    def gene_spec(self) -> FeaturizerSpec:
        return FeaturizerSpec(
            self.gene_featurizer, output_dim=self.gene_dim, buckets=self.gene_buckets,
            trainable=self.gene_trainable, seed=self.seed, source=self.gene_source or None, text=self.gene_text,
        )

    def img_spec(self, payload_kind: str) -> FeaturizerSpec:
        kind = default_image_kind(payload_kind) if self.img_featurizer == "auto" else self.img_featurizer
        return FeaturizerSpec(kind, output_dim=self.img_dim, trainable=self.img_trainable, seed=self.seed,
                              source=self.img_source or None)

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def as_dict(self) -> dict[str, str]:
        return {k: _fmt(v) for k, v in asdict(self).items()}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _convert(key: str, raw: str, typ):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, source: str = "config") -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        values[key] = _convert(key, raw, types[key])
    return RunConfig(**values)


def dict_to_config(entries: dict[str, str]) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    return parse_config("\n".join(f"{k}={v}" for k, v in entries.items() if k in known))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))
