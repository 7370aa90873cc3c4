"""Run configuration: a YAML file validated against strict pydantic models.

Unknown keys are rejected everywhere so typos fail loudly.
"""

from __future__ import annotations

from typing import Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .attacks import AttackConfig
from .objectives import KINDS, ObjectiveSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IdxSection(_Strict):
    images: str
    labels: str
    limit: Optional[int] = Field(None, ge=1)
    num_classes: Optional[int] = Field(None, ge=2)


class SplitSection(_Strict):
    train: float = Field(0.8, ge=0, le=1)
    val: float = Field(0.0, ge=0, le=1)
    test: float = Field(0.2, ge=0, le=1)

    @model_validator(mode="after")
    def _sums_to_one(self):
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.train + self.val + self.test}")
        if self.train == 0 or self.test == 0:
            raise ValueError("train and test fractions must be positive")
        return self


class MoonsParams(_Strict):
    n: int = Field(2000, ge=2)
    noise_sd: float = Field(0.15, ge=0)
    seed: Optional[int] = None


class BlobsParams(_Strict):
    num_classes: int = Field(3, ge=2)
    dim: int = Field(2, ge=1)
    n_per_class: int = Field(200, ge=1)
    center_spread: float = 1.0
    noise_sd: float = Field(0.1, ge=0)
    seed: Optional[int] = None


class DatasetSection(_Strict):
    generator: Literal["two_moons", "gaussian_blobs", "idx"] = "two_moons"
    two_moons: Optional[MoonsParams] = None
    gaussian_blobs: Optional[BlobsParams] = None
    idx: Optional[IdxSection] = None
    split: SplitSection = SplitSection()

    @model_validator(mode="after")
    def _source_present(self):
        if self.generator == "idx" and self.idx is None:
            raise ValueError("generator 'idx' needs an idx section with images/labels paths")
        return self


class ModelSection(_Strict):
    hidden: List[int] = [64, 64]


class AttackSection(_Strict):
    epsilon: float = Field(ge=0)
    eta: float = Field(gt=0)
    steps: int = Field(ge=0)
    surrogate: Literal["cross-entropy", "kl-to-clean"] = "cross-entropy"
    random_init: bool = True
    box: Optional[List[float]] = [0.0, 1.0]

    def build(self):
        return AttackConfig(self.epsilon, self.eta, self.steps, self.surrogate, self.random_init,
                            None if self.box is None else tuple(self.box))


class ObjectiveSection(_Strict):
    kind: Literal[KINDS] = "arow"
    lam: float = Field(1.0, ge=0, alias="lambda")
    alpha: float = Field(0.0, ge=0, lt=1)
    gamma: float = Field(0.0, ge=0)
    detach_weight: bool = False
    pretrained: Optional[str] = None

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _hat_needs_pretrained(self):
        if self.kind == "hat" and not self.pretrained:
            raise ValueError("hat objective requires 'pretrained' (a checkpoint path)")
        return self

    def build(self, lam=None):
        return ObjectiveSpec(self.kind, self.lam if lam is None else lam, self.alpha, self.gamma,
                             self.detach_weight, self.pretrained)


class TrainSection(_Strict):
    epochs: int = Field(60, ge=1)
    batch_size: int = Field(128, ge=1)
    lr: float = Field(0.1, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    lr_drops: List[int] = []
    swa_start: Optional[int] = None
    ema_decay: Optional[float] = None
    attack: str = "train"
    eval_attack: Optional[str] = "eval"
    fat_overshoot: Optional[int] = None


class EvalSection(_Strict):
    attacks: List[str] = ["eval"]
    restarts: int = Field(1, ge=1)
    reference: Optional[str] = None
    bucket_attack: Optional[str] = None
    split: Literal["train", "val", "test"] = "test"


class VerifySection(_Strict):
    trials: int = Field(100, ge=1)
    points_per_axis: int = Field(21, ge=2)
    samples: int = Field(50, ge=1)
    dim: int = Field(2, ge=1, le=3)
    classes: List[int] = [2, 3, 4]
    hidden: List[int] = [8]
    epsilon_max: float = Field(0.2, ge=0)
    epsilon: Optional[float] = Field(None, ge=0)
    checkpoint: Optional[str] = None


class RunConfig(_Strict):
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    attacks: Dict[str, AttackSection] = {}
    objective: ObjectiveSection = ObjectiveSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    verify: VerifySection = VerifySection()

    @model_validator(mode="after")
    def _attack_names_resolve(self):
        names = list(self.eval.attacks)
        if self.objective.kind != "natural":
            names.append(self.train.attack)
        if self.train.eval_attack is not None:
            names.append(self.train.eval_attack)
        if self.eval.bucket_attack is not None:
            names.append(self.eval.bucket_attack)
        missing = sorted({n for n in names if n not in self.attacks})
        if missing:
            raise ValueError(f"attack names not defined under 'attacks': {missing}")
        return self

    def train_config(self, lam=None, seed=None):
        t = self.train
        default = AttackConfig(0.0, 1.0, 0)
        return TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
            objective=self.objective.build(lam),
            attack=self.attacks[t.attack].build() if t.attack in self.attacks else default,
            momentum=t.momentum, weight_decay=t.weight_decay, lr_drops=tuple(t.lr_drops),
            swa_start=t.swa_start, ema_decay=t.ema_decay,
            eval_attack=self.attacks[t.eval_attack].build() if t.eval_attack else None,
            fat_overshoot=t.fat_overshoot, seed=self.seed if seed is None else seed,
        )


def _format_errors(err):
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(obj):
    try:
        cfg = RunConfig.model_validate(obj or {})
        cfg.train_config()
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from None
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path, out=None, seed=None):
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from None
    raw = dict(raw or {})
    if out is not None:
        raw["output_dir"] = out
    if seed is not None:
        raw["seed"] = seed
    return parse_config(raw)


def resolved(cfg):
    """Plain-dict echo of the fully resolved config (defaults filled in)."""
    return cfg.model_dump(mode="json", by_alias=True)
