"""
Dual-encoder architecture: a shared convolutional backbone feeding a semantic
(task class) head and a style (source subject) head.

Each head is a linear map from the flattened backbone activations to a small
embedding, followed either by a PrototypeSet (prototypes or reciprocal
points) or by a plain logit classifier. Both heads read the same backbone
activations, so a style loss back-propagates into the shared extractor.
"""

import logging
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from posr.losses import arpl_distance, arpl_probs, rpl_probs, sq_euclidean
from posr.models import BackboneConfig, HeadConfig, HeadKind, LossConfig, LossKind, ModelSpec, PointRole
from posr.rng import make_rng
from posr.tensor import DiffTensor, Parameter, ShapeError, constant, primitive_forward

logger = logging.getLogger(__name__)

UNKNOWN_SUBJECT = -1


class ModelError(Exception):
    """Base exception for model construction and inference errors."""
    pass


class ConfigurationError(ModelError):
    """Raised when backbone/head configurations disagree."""
    pass


class UnsupportedConfigurationError(ModelError):
    """Raised when an operation is not defined for a head configuration."""
    pass


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, name: str) -> Parameter:
    bound = math.sqrt(1.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), name)


class Backbone:
    """Temporal conv -> spatial conv -> ELU -> pool, then extra (conv, ELU, pool) blocks."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        kernel = config.temporal_kernel
        f_t, f_s = config.n_temporal_filters, config.n_spatial_filters

        self.temporal_weight = _uniform(rng, (f_t, 1, kernel), kernel, "backbone.temporal.weight")
        self.temporal_bias = _uniform(rng, (f_t,), kernel, "backbone.temporal.bias")
        spatial_fan_in = f_t * config.n_channels
        self.spatial_weight = _uniform(rng, (f_s, f_t, config.n_channels), spatial_fan_in, "backbone.spatial.weight")
        self.spatial_bias = _uniform(rng, (f_s,), spatial_fan_in, "backbone.spatial.bias")
        self.blocks: List[Tuple[Parameter, Parameter]] = []
        for i in range(config.n_extra_blocks):
            self.blocks.append((
                _uniform(rng, (f_s, f_s, kernel), f_s * kernel, f"backbone.block{i}.weight"),
                _uniform(rng, (f_s,), f_s * kernel, f"backbone.block{i}.bias"),
            ))

    def parameters(self) -> List[Parameter]:
        params = [self.temporal_weight, self.temporal_bias, self.spatial_weight, self.spatial_bias]
        for weight, bias in self.blocks:
            params.extend([weight, bias])
        return params

    def __call__(self, x: DiffTensor) -> DiffTensor:
        cfg = self.config
        batch = x.shape[0]
        h = x.reshape(batch, 1, cfg.n_channels, cfg.n_samples)
        h = primitive_forward("conv1d_temporal", [h, self.temporal_weight, self.temporal_bias])
        h = primitive_forward("conv_spatial", [h, self.spatial_weight, self.spatial_bias])
        h = primitive_forward("max_pool_time", [h.elu()], {"size": cfg.pool_size})
        for weight, bias in self.blocks:
            h = primitive_forward("conv1d_temporal", [h, weight, bias])
            h = primitive_forward("max_pool_time", [h.elu()], {"size": cfg.pool_size})
        return h.reshape(batch, cfg.flatten_dim)


class PrototypeSet:
    """One learnable point per category, plus radii (initialized to 1) for reciprocal points."""

    def __init__(self, n_categories: int, embed_dim: int, role: PointRole, rng: np.random.Generator, prefix: str):
        self.role = PointRole(role)
        self.points = Parameter(0.1 * rng.standard_normal((n_categories, embed_dim)), f"{prefix}.points")
        self.radii: Optional[Parameter] = None
        if self.role == PointRole.RECIPROCAL_POINT:
            self.radii = Parameter(np.ones(n_categories), f"{prefix}.radii")

    def parameters(self) -> List[Parameter]:
        return [self.points] + ([self.radii] if self.radii is not None else [])


class EncoderHead:
    """Linear embedding plus a prototype set or a logit classifier."""

    def __init__(self, config: HeadConfig, flatten_dim: int, rng: np.random.Generator, name: str):
        self.config = config
        self.name = name
        self.weight = _uniform(rng, (flatten_dim, config.embed_dim), flatten_dim, f"{name}.linear.weight")
        self.bias = _uniform(rng, (config.embed_dim,), flatten_dim, f"{name}.linear.bias")
        self.prototypes: Optional[PrototypeSet] = None
        self.classifier: Optional[Tuple[Parameter, Parameter]] = None
        if config.head_kind == HeadKind.DISTANCE_PROTOTYPE:
            self.prototypes = PrototypeSet(config.n_categories, config.embed_dim, config.point_role, rng, f"{name}.prototypes")
        else:
            self.classifier = (
                _uniform(rng, (config.embed_dim, config.n_categories), config.embed_dim, f"{name}.classifier.weight"),
                _uniform(rng, (config.n_categories,), config.embed_dim, f"{name}.classifier.bias"),
            )

    def parameters(self) -> List[Parameter]:
        params = [self.weight, self.bias]
        if self.prototypes is not None:
            params.extend(self.prototypes.parameters())
        else:
            params.extend(self.classifier)
        return params

    def __call__(self, features: DiffTensor) -> DiffTensor:
        return features @ self.weight + self.bias

    def logits(self, embeds: DiffTensor) -> DiffTensor:
        if self.classifier is None:
            raise UnsupportedConfigurationError(f"{self.name} head has no logit classifier")
        weight, bias = self.classifier
        return embeds @ weight + bias

    def class_scores(self, embeds: np.ndarray, gamma_temp: float) -> np.ndarray:
        """Scores whose row argmax is the predicted category."""
        e = constant(embeds)
        if self.classifier is not None:
            return self.logits(e).values
        points = constant(self.prototypes.points.values)
        kind = self.config.loss_kind
        if kind == LossKind.GCPL:
            return -sq_euclidean(e, points).values
        if kind == LossKind.RPL:
            return rpl_probs(sq_euclidean(e, points), gamma_temp).values
        return arpl_probs(arpl_distance(e, points), gamma_temp).values


class DualEncoderModel:
    """Shared backbone plus semantic and (optional) style heads."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        self.backbone = Backbone(spec.backbone, rng)
        self.semantic_head = EncoderHead(spec.semantic, spec.backbone.flatten_dim, rng, "semantic")
        self.style_head: Optional[EncoderHead] = None
        if spec.style is not None:
            self.style_head = EncoderHead(spec.style, spec.backbone.flatten_dim, rng, "style")

        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"Duplicate parameter names: {names}")

    @property
    def loss_config(self) -> LossConfig:
        return self.spec.loss

    @property
    def source_subjects(self) -> List[int]:
        return list(self.spec.source_subjects)

    def parameters(self) -> List[Parameter]:
        params = self.backbone.parameters() + self.semantic_head.parameters()
        if self.style_head is not None:
            params += self.style_head.parameters()
        return params

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def state(self) -> Dict[str, np.ndarray]:
        """Copy of every parameter value."""
        return {p.name: p.values.copy() for p in self.parameters()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for name, param in self.named_parameters().items():
            if name not in state:
                raise ConfigurationError(f"State is missing parameter {name}")
            if state[name].shape != param.shape:
                raise ShapeError(f"{name}: expected shape {param.shape}, got {state[name].shape}")
            param.values[...] = state[name]

    def features(self, data: np.ndarray) -> DiffTensor:
        cfg = self.spec.backbone
        expected = (cfg.n_channels, cfg.n_samples)
        if data.ndim != 3 or tuple(data.shape[1:]) != expected:
            raise ShapeError(f"model expects trials shaped [B x {expected[0]} x {expected[1]}], got {tuple(data.shape)}")
        return self.backbone(constant(data))

    def forward(self, batch) -> Tuple[DiffTensor, Optional[DiffTensor]]:
        features = self.features(_trials(batch))
        style = self.style_head(features) if self.style_head is not None else None
        return self.semantic_head(features), style


def _trials(batch) -> np.ndarray:
    """Trial array of an EpochBatch, or the array itself."""
    if not isinstance(batch, np.ndarray):
        batch = getattr(batch, "data", batch)
    return np.asarray(batch, dtype=np.float64)


def build_model(
    backbone: BackboneConfig,
    semantic: HeadConfig,
    style: Optional[HeadConfig],
    seed: int,
    loss_config: Optional[LossConfig] = None,
    source_subjects: Optional[Sequence[int]] = None,
) -> DualEncoderModel:
    """
    Build a model with every weight drawn from a generator seeded by `seed`.

    Linear and conv weights are uniform in +-sqrt(1/fan_in); prototype points
    are normal(0, 0.1); radii start at 1.

    Raises:
        ConfigurationError: inconsistent configs
    """
    try:
        backbone = BackboneConfig.model_validate(backbone.model_dump())
    except ValueError as e:
        raise ConfigurationError(str(e))
    if semantic.embed_dim < 1 or (style is not None and style.embed_dim < 1):
        raise ConfigurationError("embed_dim must be positive")
    source_subjects = list(source_subjects or [])
    if style is not None and source_subjects and len(source_subjects) != style.n_categories:
        raise ConfigurationError(
            f"style head has {style.n_categories} categories but {len(source_subjects)} source subjects"
        )

    loss_config = loss_config or LossConfig(
        clf_kind=semantic.loss_kind,
        ossr_kind=style.loss_kind if style is not None else LossKind.NONE,
    )
    spec = ModelSpec(backbone=backbone, semantic=semantic, style=style, loss=loss_config, source_subjects=source_subjects)
    return DualEncoderModel(spec, make_rng(seed, "model-init"))


def forward(model: DualEncoderModel, batch) -> Tuple[DiffTensor, Optional[DiffTensor]]:
    return model.forward(batch)


def predict_class(model: DualEncoderModel, batch) -> np.ndarray:
    """Nearest prototype, most probable reciprocal class, or top logit; ties go to the lowest index."""
    embeds = model.semantic_head(model.features(_trials(batch))).values
    scores = model.semantic_head.class_scores(embeds, model.loss_config.gamma_temp)
    return np.argmax(scores, axis=1)


class SubjectRecognition(NamedTuple):
    subjects: np.ndarray  # source subject id, or UNKNOWN_SUBJECT
    scores: np.ndarray  # higher means more unknown


def style_scores(model: DualEncoderModel, batch) -> Tuple[np.ndarray, np.ndarray]:
    """(best style category index, open-set score) per trial."""
    head = model.style_head
    if head is None or head.prototypes is None:
        raise UnsupportedConfigurationError("subject recognition needs a distance_prototype style head")
    embeds = constant(head(model.features(_trials(batch))).values)
    points = constant(head.prototypes.points.values)
    if head.prototypes.role == PointRole.PROTOTYPE:
        dists = sq_euclidean(embeds, points).values
        return np.argmin(dists, axis=1), dists.min(axis=1)
    gamma = model.loss_config.gamma_temp
    if head.config.loss_kind == LossKind.ARPL:
        probs = arpl_probs(arpl_distance(embeds, points), gamma).values
    else:
        probs = rpl_probs(sq_euclidean(embeds, points), gamma).values
    return np.argmax(probs, axis=1), -probs.max(axis=1)


def recognize_subject(model: DualEncoderModel, batch, threshold: float) -> SubjectRecognition:
    """Closest source subject per trial, or UNKNOWN_SUBJECT when the score exceeds threshold."""
    best, scores = style_scores(model, batch)
    ids = np.asarray(model.source_subjects or range(model.style_head.config.n_categories), dtype=np.int64)
    subjects = np.where(scores > threshold, UNKNOWN_SUBJECT, ids[best])
    return SubjectRecognition(subjects=subjects, scores=scores)
