"""Training configuration: a JSON file whose keys mirror :class:`TrainConfig`.

Nested sections (``model``, ``model.encoder``, ``contrast``) are addressed with
dotted keys on the command line, e.g. ``--contrast.tau_temp 0.05``.  The
``COMHR_SEED`` environment variable overrides ``seed``.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from ..contrast import ContrastConfig
from ..model import ModelConfig
from ..nodeinit import EncoderConfig


@dataclass
class TrainConfig:
    batch_scenes: int = 32
    lr: float = 1e-4
    min_lr: float = 0.0
    restart_period: int = 500       # steps in the first cosine cycle
    restart_mult: int = 1
    optimizer: str = "sgd"          # "sgd", "momentum" or "adam"
    momentum: float = 0.9           # also Adam's first-moment decay
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 0.0          # 0 disables global-norm clipping
    epochs: int = 60
    seed: int = 0
    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)
    contrastive: bool = True
    max_group: int = 8
    # synthetic data used by the CLI when no scene directory is given
    n_train_scenes: int = 64
    persons_per_scene: int = 6
    data_seed: int = 1000
    model: ModelConfig = field(default_factory=ModelConfig)
    contrast: ContrastConfig = field(default_factory=ContrastConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.contrast, dict):
            self.contrast = ContrastConfig(**self.contrast)
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if len(self.lambdas) != 4 or any(v < 0 for v in self.lambdas):
            raise ValueError("lambdas must be four nonnegative weights")
        if self.lr < 0 or self.epochs <= 0 or self.restart_period <= 0 or self.batch_scenes <= 0:
            raise ValueError("lr must be >= 0 and epochs, restart_period, batch_scenes positive")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def effective_lambdas(self):
        l1, l2, l3, l4 = self.lambdas
        return (l1, l2, l3, l4 if self.contrastive else 0.0)

    def to_dict(self):
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        model = dict(data.pop("model", {}))
        if "encoder" in model:
            model["encoder"] = EncoderConfig(**model["encoder"])
        return cls(model=ModelConfig(**model), contrast=ContrastConfig(**data.pop("contrast", {})), **data)

    @classmethod
    def load(cls, path, overrides=None, environ=None):
        with open(path) as fh:
            data = json.load(fh)
        return cls.resolve(data, overrides, environ)

    @classmethod
    def resolve(cls, data=None, overrides=None, environ=None):
        data = json.loads(json.dumps(data or cls().to_dict()))
        base = cls().to_dict()
        for key, value in (overrides or {}).items():
            set_dotted(data, key, value, base)
        environ = os.environ if environ is None else environ
        if "COMHR_SEED" in environ:
            data["seed"] = int(environ["COMHR_SEED"])
        return cls.from_dict(data)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def flat_keys(d=None, prefix=""):
    """Dotted key -> default value for every leaf of the config."""
    d = TrainConfig().to_dict() if d is None else d
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(flat_keys(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def parse_value(text, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, list):
        return json.loads(text) if text.startswith("[") else [parse_value(t, like[0] if like else "") for t in text.split(",")]
    return text


def set_dotted(data, key, value, base=None):
    parts = key.split(".")
    node, ref = data, base
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        ref = ref.get(p, {}) if isinstance(ref, dict) else None
    leaf = parts[-1]
    if isinstance(ref, dict) and leaf not in ref:
        raise KeyError(f"unknown config key {key!r}")
    if isinstance(value, str) and isinstance(ref, dict):
        value = parse_value(value, ref[leaf])
    node[leaf] = value
