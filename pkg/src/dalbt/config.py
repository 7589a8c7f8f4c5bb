"""Experiment configuration: JSON documents validated into dataclasses.

Unknown keys and type mismatches are rejected with the offending key path.
Defaults (every key is optional except the dataset ``kind`` and the file
paths of file-backed datasets):

=========================  =====================  ============================================
key                        default                meaning
=========================  =====================  ============================================
dataset.kind               "synth_blobs"          synth_blobs | idx | cifar_binary
splits.initial_labeled     20                     size of the first labeled pool
splits.val_size            0                      reserved validation ids
splits.stratified          true                   class-balanced first labeled pool
ood                        []                     out-of-distribution sources mixed into the pool
arch.encoder               "mlp"                  mlp | convnet
arch.latent_dim            32                     size of z
arch.hidden                [128]                  mlp hidden widths
arch.conv_channels         [8, 16]                convnet block widths
arch.conv_kernel           5
arch.projector             [128, 128]             projector widths (last = embedding size)
loss.gamma                 0.001                  weight of the Barlow Twins term
loss.lambda_bt             0.005                  off-diagonal weight
loss.center_embeddings     false
train.learning_rate        0.001
train.weight_decay         1e-05
train.batch_size           64                     must be >= 2
train.epochs               20
train.optimizer            "adam"                 adam | sgd
train.reinit_per_stage     true
train.select_best_on_val   false
augment.*                  see AugmentationConfig
weibull.eta                20                     tail size
weibull.min_class_samples  5
stages                     5                      number of train/acquire rounds
budget                     20                     ids selected per round
strategy                   "weibull_max"          weibull_max | min_confidence | random
labeled_fraction_cap       0.4                    stop when labeled / train reaches this
exclude_rejected           false                  never re-offer ids the oracle rejected
ood_reject_threshold       null                   drop candidates scoring above this
seeds                      [0]
=========================  =====================  ============================================
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import ConfigDict, Field, TypeAdapter, ValidationError
from typing_extensions import Annotated

from .augmentations import AugmentationConfig
from .errors import ConfigurationError
from .losses import LossWeights
from .trainer import TrainConfig
from .weibull_openset import WeibullFitConfig

_STRICT = ConfigDict(extra="forbid", strict=True)


@dataclass(frozen=True)
class SynthBlobsDataset:
    __pydantic_config__ = _STRICT
    kind: Literal["synth_blobs"] = "synth_blobs"
    num_classes: int = 3
    dim: int = 8
    per_class: int = 100
    test_per_class: int = 50
    noise_sigma: float = 0.05
    class_means: Optional[List[List[float]]] = None
    seed: int = 0


@dataclass(frozen=True)
class IdxDataset:
    __pydantic_config__ = _STRICT
    kind: Literal["idx"]
    train_images: str
    train_labels: str
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None
    test_size: int = 0  # carved from the train file when no test files are given


@dataclass(frozen=True)
class CifarDataset:
    __pydantic_config__ = _STRICT
    kind: Literal["cifar_binary"]
    train_paths: List[str]
    test_paths: List[str] = field(default_factory=list)
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None
    test_size: int = 0


DatasetConfig = Annotated[Union[SynthBlobsDataset, IdxDataset, CifarDataset], Field(discriminator="kind")]


@dataclass(frozen=True)
class OodBlobs:
    __pydantic_config__ = _STRICT
    kind: Literal["synth_blobs"] = "synth_blobs"
    count: int = 60
    mean: Optional[List[float]] = None
    noise_sigma: float = 0.05
    seed: int = 1
    origin: str = "OOD_BLOBS"


@dataclass(frozen=True)
class OodIdx:
    __pydantic_config__ = _STRICT
    kind: Literal["idx"]
    images: str
    limit: Optional[int] = None
    origin: str = "OOD_IDX"


@dataclass(frozen=True)
class OodCifar:
    __pydantic_config__ = _STRICT
    kind: Literal["cifar_binary"]
    paths: List[str]
    limit: Optional[int] = None
    origin: str = "OOD_CIFAR"


OodSource = Annotated[Union[OodBlobs, OodIdx, OodCifar], Field(discriminator="kind")]


@dataclass(frozen=True)
class SplitConfig:
    __pydantic_config__ = _STRICT
    initial_labeled: int = 20
    val_size: int = 0
    stratified: bool = True


@dataclass(frozen=True)
class ArchConfig:
    __pydantic_config__ = _STRICT
    encoder: Literal["mlp", "convnet"] = "mlp"
    latent_dim: int = 32
    hidden: Tuple[int, ...] = (128,)
    conv_channels: Tuple[int, ...] = (8, 16)
    conv_kernel: int = 5
    projector: Tuple[int, ...] = (128, 128)


@dataclass(frozen=True)
class ExperimentConfig:
    __pydantic_config__ = _STRICT
    dataset: DatasetConfig = field(default_factory=SynthBlobsDataset)
    ood: Tuple[OodSource, ...] = ()
    splits: SplitConfig = field(default_factory=SplitConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    weibull: WeibullFitConfig = field(default_factory=WeibullFitConfig)
    stages: int = 5
    budget: int = 20
    strategy: Literal["weibull_max", "min_confidence", "random"] = "weibull_max"
    labeled_fraction_cap: float = 0.4
    exclude_rejected: bool = False
    ood_reject_threshold: Optional[float] = None
    seeds: Tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 0 < self.labeled_fraction_cap <= 1:
            raise ValueError("labeled_fraction_cap must lie in (0, 1]")
        if not self.seeds:
            raise ValueError("seeds must not be empty")


# the component configs live in their own modules as plain dataclasses
for _cls in (LossWeights, TrainConfig, AugmentationConfig, WeibullFitConfig):
    _cls.__pydantic_config__ = _STRICT

_ADAPTER = TypeAdapter(ExperimentConfig)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if err["type"] in ("extra_forbidden", "unexpected_keyword_argument"):
            msg = "unknown key"
        lines.append(f"{path}: {msg}")
    return "; ".join(lines)


def config_from_json(text: str) -> ExperimentConfig:
    try:
        return _ADAPTER.validate_json(text)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {_format_errors(exc)}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    return config_from_json(json.dumps(data))


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return config_from_json(text)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def plain(v):
        if is_dataclass(v):
            return {k: plain(x) for k, x in asdict(v).items()}
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v

    return plain(cfg)


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(cfg_or_dict) -> str:
    data = cfg_or_dict if isinstance(cfg_or_dict, dict) else config_to_dict(cfg_or_dict)
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()[:16]
