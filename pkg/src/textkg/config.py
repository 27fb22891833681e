"""Run configuration: model shape, training recipe, paths, ablation switches.

Defaults are the published hyperparameters; the desk-scale fixtures shrink
``d_model`` and friends through the config file.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class ModalityConfig:
    d_model: int = 768
    heads: int = 12
    n_blocks: int = 2
    n_r: int = 6
    n_k: int = 5
    max_caption: int = 20
    max_transcript: int = 300
    frames_per_second_sampled: int = 2
    appearance_dim: int = 2048
    motion_dim: int = 1024
    region_dim: int = 1536
    word_dim: int = 300
    max_frames: int = 64
    max_objects: int = 12
    ffn_mult: int = 4
    dropout: float = 0.0
    omega1: float = 0.8
    omega2: float = 0.2

    def validate(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        for name in ("d_model", "heads", "n_blocks", "max_caption", "max_transcript", "n_r",
                     "max_frames", "max_objects", "word_dim", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_k < 0:
            raise ConfigError("n_k must be >= 0")
        if self.dropout != 0.0:
            raise ConfigError("dropout is not implemented; keep it at 0")
        if self.omega1 < 0 or self.omega2 < 0:
            raise ConfigError("fusion weights must be non-negative")
        return self


@dataclass
class Switches:
    use_video: bool = True
    use_regions: bool = True
    use_text: bool = True
    use_general_kg: bool = True
    use_specific_kg: bool = True
    use_knowledge_selection: bool = True

    @property
    def use_kg(self):
        return self.use_general_kg or self.use_specific_kg


@dataclass
class TrainConfig:
    lambda1: float = 0.5
    lambda2: float = 0.5
    base_lr: float = 1e-4
    warmup_fraction: float = 0.1
    weight_decay: float = 0.01
    batch_size: int = 6
    epochs: int = 10
    seed: int = 0
    switches: Switches = field(default_factory=Switches)

    def validate(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ConfigError("need lambda1, lambda2 >= 0 with a positive sum")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        return self


@dataclass
class Paths:
    manifest: str = ""
    word_vectors: str = ""
    general_kg: str = ""
    lexicon: str = ""
    out_dir: str = "out"


@dataclass
class RunConfig:
    model: ModalityConfig = field(default_factory=ModalityConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: Paths = field(default_factory=Paths)
    min_word_count: int = 1
    unk_seed: int = 0

    def validate(self):
        self.model.validate()
        self.train.validate()
        return self

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        train = dict(data.pop("train", {}) or {})
        switches = Switches(**_known(Switches, train.pop("switches", {}) or {}))
        cfg = cls(
            model=ModalityConfig(**_known(ModalityConfig, data.pop("model", {}) or {})),
            train=TrainConfig(switches=switches, **_known(TrainConfig, train)),
            paths=Paths(**_known(Paths, data.pop("paths", {}) or {})),
            **_known(cls, data),
        )
        return cfg.validate()

    @classmethod
    def load(cls, path):
        """Read a JSON config; relative paths resolve against its directory."""
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        cfg = cls.from_dict(data)
        base = os.path.dirname(os.path.abspath(path))
        for f in fields(Paths):
            value = getattr(cfg.paths, f.name)
            if value and not os.path.isabs(value):
                setattr(cfg.paths, f.name, os.path.join(base, value))
        return cfg


def _known(klass, data):
    names = {f.name for f in fields(klass)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
    return data
