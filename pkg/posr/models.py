"""
Pydantic models for run configuration, model architecture and results.

These models handle validation and serialization for every config section
of a run file (`model.*`, `loss.*`, `train.*`, `data.*`, `synth.*`, `loso.*`,
`output.*`) plus the records written by training and evaluation.
Training defaults: lr 0.005 with cosine
annealing, beta 0.001, alpha 0.1, open-space weight 0.001.
"""

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Enums for type safety
class LossKind(str, Enum):
    """Loss families usable by either head."""
    CE = "CE"
    GCPL = "GCPL"
    RPL = "RPL"
    ARPL = "ARPL"
    NONE = "NONE"


class HeadKind(str, Enum):
    DISTANCE_PROTOTYPE = "distance_prototype"
    PLAIN_LOGITS = "plain_logits"


class PointRole(str, Enum):
    PROTOTYPE = "prototype"
    RECIPROCAL_POINT = "reciprocal_point"


class DataSource(str, Enum):
    """Where epochs come from."""
    SYNTHETIC = "synthetic"
    FILE = "file"


def _split_list(value):
    """Accept comma-separated strings from config files."""
    if value is None:
        return []
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackboneConfig(_Section):
    """Shared convolutional feature extractor.

    Temporal conv (per channel) -> spatial conv (across channels) -> ELU -> max-pool,
    then n_extra_blocks of (temporal conv -> ELU -> max-pool).
    """
    n_channels: int = Field(..., gt=0)
    n_samples: int = Field(..., gt=0)
    temporal_kernel: int = Field(default=11, gt=0)
    n_temporal_filters: int = Field(default=8, gt=0)
    n_spatial_filters: int = Field(default=8, gt=0)
    pool_size: int = Field(default=4, gt=0)
    n_extra_blocks: int = Field(default=1, ge=0)
    flatten_dim: Optional[int] = Field(default=None, description="Derived; a supplied value must match")

    def time_extents(self) -> List[int]:
        """Time length after each pooling stage; raises ValueError if a stage collapses."""
        extents = []
        steps = self.n_samples
        for block in range(self.n_extra_blocks + 1):
            steps = steps - self.temporal_kernel + 1
            if steps < 1:
                raise ValueError(
                    f"temporal kernel {self.temporal_kernel} does not fit block {block} "
                    f"(n_samples={self.n_samples})"
                )
            steps //= self.pool_size
            if steps < 1:
                raise ValueError(f"pool size {self.pool_size} collapses block {block} (n_samples={self.n_samples})")
            extents.append(steps)
        return extents

    @model_validator(mode="after")
    def derive_flatten_dim(self):
        derived = self.n_spatial_filters * self.time_extents()[-1]
        if self.flatten_dim is None:
            self.flatten_dim = derived
        elif self.flatten_dim != derived:
            raise ValueError(f"flatten_dim {self.flatten_dim} does not match derived activation size {derived}")
        return self


class HeadConfig(_Section):
    """One encoder head: linear map to embed_dim plus prototypes or a logit classifier."""
    embed_dim: int = Field(default=2, gt=0)
    n_categories: int = Field(..., gt=0)
    head_kind: HeadKind
    point_role: Optional[PointRole] = None
    loss_kind: LossKind

    @model_validator(mode="after")
    def validate_kind_pairing(self):
        if self.loss_kind == LossKind.NONE:
            raise ValueError("A head needs a loss; NONE disables the head instead")
        if self.head_kind == HeadKind.PLAIN_LOGITS:
            if self.loss_kind != LossKind.CE:
                raise ValueError("plain_logits heads are only valid with CE")
            if self.point_role is not None:
                raise ValueError("plain_logits heads carry no point role")
        else:
            expected = PointRole.PROTOTYPE if self.loss_kind == LossKind.GCPL else PointRole.RECIPROCAL_POINT
            if self.loss_kind == LossKind.CE:
                raise ValueError("CE requires a plain_logits head")
            if self.point_role != expected:
                raise ValueError(f"{self.loss_kind.value} requires point role {expected.value}")
        return self

    @classmethod
    def for_loss(cls, loss_kind: LossKind, n_categories: int, embed_dim: int = 2) -> "HeadConfig":
        loss_kind = LossKind(loss_kind)
        if loss_kind == LossKind.CE:
            return cls(embed_dim=embed_dim, n_categories=n_categories,
                       head_kind=HeadKind.PLAIN_LOGITS, loss_kind=loss_kind)
        role = PointRole.PROTOTYPE if loss_kind == LossKind.GCPL else PointRole.RECIPROCAL_POINT
        return cls(embed_dim=embed_dim, n_categories=n_categories,
                   head_kind=HeadKind.DISTANCE_PROTOTYPE, point_role=role, loss_kind=loss_kind)


class LossConfig(_Section):
    """Hybrid objective L = L_clf + alpha * L_ossr."""
    clf_kind: LossKind = LossKind.CE
    ossr_kind: LossKind = LossKind.NONE
    gamma_temp: float = Field(default=1.0, gt=0, description="Softmax temperature of the distance probabilities")
    beta: float = Field(default=0.001, ge=0, description="Prototype-loss weight")
    gamma_reg: float = Field(default=0.001, ge=0, description="Open-space regularizer weight")
    alpha: float = Field(default=0.1, ge=0, description="Weight of the subject-recognition task")

    @field_validator("clf_kind")
    @classmethod
    def clf_needs_loss(cls, v: LossKind) -> LossKind:
        if v == LossKind.NONE:
            raise ValueError("clf_kind cannot be NONE")
        return v


class ArchitectureConfig(_Section):
    """Architecture knobs; channel/sample counts come from the data."""
    temporal_kernel: int = Field(default=11, gt=0)
    n_temporal_filters: int = Field(default=8, gt=0)
    n_spatial_filters: int = Field(default=8, gt=0)
    pool_size: int = Field(default=4, gt=0)
    n_extra_blocks: int = Field(default=1, ge=0)
    embed_dim: int = Field(default=2, gt=0)

    def backbone_for(self, n_channels: int, n_samples: int) -> BackboneConfig:
        return BackboneConfig(
            n_channels=n_channels,
            n_samples=n_samples,
            temporal_kernel=self.temporal_kernel,
            n_temporal_filters=self.n_temporal_filters,
            n_spatial_filters=self.n_spatial_filters,
            pool_size=self.pool_size,
            n_extra_blocks=self.n_extra_blocks,
        )


class TrainConfig(_Section):
    lr: float = Field(default=0.005, gt=0)
    lr_min: float = Field(default=0.0, ge=0)
    epochs: int = Field(default=100, gt=0)
    batch_size: int = Field(default=32, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    recognition_threshold: Optional[float] = Field(
        default=None,
        description="Style-score threshold above which a trial is UNKNOWN; unset picks one per point role",
    )

    @model_validator(mode="after")
    def validate_lr_range(self):
        if self.lr_min > self.lr:
            raise ValueError("lr_min must not exceed lr")
        return self

    def threshold_for(self, role: PointRole) -> float:
        """
        Recognition threshold for a style head.

        Prototype scores are squared distances (>= 0); reciprocal-point scores
        are negated top probabilities in [-1, 0), so one number cannot serve both.
        """
        if self.recognition_threshold is not None:
            return self.recognition_threshold
        return 1.0 if PointRole(role) == PointRole.PROTOTYPE else -0.5


class SynthSpec(_Section):
    """Synthetic multi-subject motor-imagery-like data."""
    n_subjects: int = Field(default=6, ge=1)
    n_classes: int = Field(default=2, ge=2)
    n_channels: int = Field(default=8, ge=2)
    n_samples: int = Field(default=200, gt=0)
    fs_hz: float = Field(default=250.0, gt=0)
    trials_per_subject_per_session: int = Field(default=25, gt=0)
    n_sessions: int = Field(default=4, ge=2, description="One session is reserved for evaluation")
    class_freq_hz: List[float] = Field(default_factory=lambda: [10.0, 12.0])
    class_amp: float = Field(default=2.0, ge=0)
    off_side_gain: float = Field(default=0.25, ge=0, description="Amplitude gain on the non-lateralized channels")
    subject_offset_sigma: float = Field(default=0.5, ge=0)
    noise_sigma: float = Field(default=1.0, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("class_freq_hz", mode="before")
    @classmethod
    def parse_freqs(cls, v):
        return _split_list(v)

    @model_validator(mode="after")
    def validate_classes(self):
        if len(self.class_freq_hz) != self.n_classes:
            raise ValueError(f"class_freq_hz needs {self.n_classes} entries, got {len(self.class_freq_hz)}")
        if self.n_channels < self.n_classes:
            raise ValueError("n_channels must be at least n_classes for lateralization")
        return self


class DataConfig(_Section):
    source: DataSource = DataSource.SYNTHETIC
    path: Optional[str] = None
    downsample_factor: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def validate_path(self):
        if self.source == DataSource.FILE and not self.path:
            raise ValueError("data.path is required when data.source = file")
        return self


class LOSOConfig(_Section):
    pool: List[int] = Field(default_factory=list, description="Subject ids; empty means every subject in the data")
    eval_session: Optional[int] = Field(default=None, ge=0, description="Defaults to the last session")
    train_fraction: float = Field(default=0.8, gt=0, lt=1)
    run_id: int = Field(default=0, ge=0)
    fold_index: int = Field(default=0, ge=0, description="Fold trained by the train command")
    parallel: int = Field(default=0, ge=0, description="0 falls back to POSR_THREADS")
    methods: List[str] = Field(default_factory=list, description="Method names; empty means the loss.* method")
    n_runs: int = Field(default=1, ge=1)
    pool_size: Optional[int] = Field(default=None, ge=2)

    @field_validator("pool", "methods", mode="before")
    @classmethod
    def parse_lists(cls, v):
        return _split_list(v)


class OutputConfig(_Section):
    dir: Optional[str] = None


class RunConfig(_Section):
    """Everything needed to reproduce a run."""
    model: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    synth: SynthSpec = Field(default_factory=SynthSpec)
    loso: LOSOConfig = Field(default_factory=LOSOConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


class ModelSpec(BaseModel):
    """Architecture echo stored inside checkpoints."""
    backbone: BackboneConfig
    semantic: HeadConfig
    style: Optional[HeadConfig] = None
    loss: LossConfig
    source_subjects: List[int] = Field(default_factory=list)


class EpochStats(BaseModel):
    """One row of training history."""
    epoch: int
    lr: float
    loss: float
    train_accuracy: float
    val_accuracy: float
    clf_open_reg: Optional[float] = None
    ossr_open_reg: Optional[float] = None


class MetricsRecord(BaseModel):
    """One LOSO fold result."""
    run_id: int
    fold: int
    target_subject: int
    method: str
    accuracy: float = Field(..., ge=0, le=1)
    ossr_auroc: Optional[float] = Field(default=None, ge=0, le=1)
    seed: int
    epochs: int


class MethodAggregate(BaseModel):
    """Table-style summary of one method's accuracies."""
    method: str
    n_folds: int
    n_runs: int
    mean: float
    std: float
    run_mean: float
    run_std: float
    mean_auroc: Optional[float] = None
    single_record: bool = False

    @property
    def formatted(self) -> str:
        return f"{self.mean * 100:.2f} (±{self.std * 100:.2f})"

    @property
    def formatted_runs(self) -> str:
        return f"{self.run_mean * 100:.2f} (±{self.run_std * 100:.2f})"
