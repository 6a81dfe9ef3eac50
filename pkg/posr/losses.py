"""
Distance-based probabilities and losses for both encoder heads.

Three prototype families are supported alongside plain cross-entropy:

- GCPL: softmax over negated, temperature-scaled squared distances to class
  prototypes, plus a prototype (compactness) loss weighted by beta.
- RPL: softmax over positive scaled squared distances to reciprocal points,
  plus an MSE between the own-class distance and a learnable radius.
- ARPL: RPL with distance d_e - d_d (squared Euclidean minus dot product) and a
  hinge on d_e - R in place of the MSE.

All losses reduce the batch by the arithmetic mean. Softmaxes subtract the
row maximum before exponentiating.
"""

import logging
from typing import TYPE_CHECKING, Optional, Sequence, Tuple

import numpy as np

from posr.models import LossConfig, LossKind
from posr.tensor import DiffTensor, ShapeError, constant

if TYPE_CHECKING:
    from posr.encoder import EncoderHead

logger = logging.getLogger(__name__)

_PROB_FLOOR = float(np.finfo(np.float64).tiny)


class LossError(Exception):
    """Base exception for loss computation errors."""
    pass


class LabelRangeError(LossError):
    """Raised when a label is outside [0, n_categories)."""
    pass


class MissingRadiiError(LossError):
    """Raised when an open-space regularizer is asked for without radii."""
    pass


def check_labels(labels: Sequence[int], n_categories: int, batch_size: Optional[int] = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if batch_size is not None and labels.shape[0] != batch_size:
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {batch_size}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_categories):
        raise LabelRangeError(f"labels must lie in [0, {n_categories}), got range [{labels.min()}, {labels.max()}]")
    return labels


def one_hot(labels: np.ndarray, n_categories: int) -> DiffTensor:
    encoded = np.zeros((labels.shape[0], n_categories))
    encoded[np.arange(labels.shape[0]), labels] = 1.0
    return constant(encoded)


def _check_pair(embeds: DiffTensor, points: DiffTensor) -> Tuple[int, int, int]:
    if embeds.values.ndim != 2 or points.values.ndim != 2 or embeds.shape[1] != points.shape[1]:
        raise ShapeError(f"embeddings {embeds.shape} and points {points.shape} must be [B x d] and [C x d]")
    return embeds.shape[0], points.shape[0], embeds.shape[1]


def _own(points: DiffTensor, labels: np.ndarray) -> DiffTensor:
    """Row b = points[labels[b]], kept differentiable through a one-hot contraction."""
    return one_hot(labels, points.shape[0]) @ points


def _own_radius(radii: Optional[DiffTensor], labels: np.ndarray) -> DiffTensor:
    if radii is None:
        raise MissingRadiiError("open-space regularizer needs one radius per category")
    n_categories = radii.values.size
    check_labels(labels, n_categories)
    return (one_hot(labels, n_categories) @ radii.reshape(n_categories, 1)).reshape(labels.shape[0])


def _own_sq_distance(embeds: DiffTensor, points: DiffTensor, labels: np.ndarray) -> DiffTensor:
    return (embeds - _own(points, labels)).square().sum(axis=1)


def _log_softmax(z: DiffTensor) -> DiffTensor:
    shifted = z - constant(z.values.max(axis=1, keepdims=True))
    return shifted - shifted.exp().sum(axis=1, keepdims=True).log()


def _nll(log_probs: DiffTensor, labels: np.ndarray) -> DiffTensor:
    picked = (log_probs * one_hot(labels, log_probs.shape[1])).sum(axis=1)
    return -picked.mean()


def sq_euclidean(embeds: DiffTensor, points: DiffTensor) -> DiffTensor:
    """Squared Euclidean distance between every embedding and every point, [B x C]."""
    batch, n_points, dim = _check_pair(embeds, points)
    diff = embeds.reshape(batch, 1, dim) - points.reshape(1, n_points, dim)
    return diff.square().sum(axis=2)


def _dot(embeds: DiffTensor, points: DiffTensor) -> DiffTensor:
    batch, n_points, dim = _check_pair(embeds, points)
    return (embeds.reshape(batch, 1, dim) * points.reshape(1, n_points, dim)).sum(axis=2)


def gcpl_probs(dists: DiffTensor, gamma_temp: float) -> DiffTensor:
    return _log_softmax(dists * (-gamma_temp)).exp()


def dce_loss(probs: DiffTensor, labels: Sequence[int]) -> DiffTensor:
    """
    Mean of -log p(true class).

    Works on probabilities, so a true-class probability that underflowed to 0
    is clipped to the smallest normal float (loss about 708, zero gradient).
    Training goes through log-softmax instead and has no such floor.
    """
    labels = check_labels(labels, probs.shape[1], probs.shape[0])
    picked = (probs * one_hot(labels, probs.shape[1])).sum(axis=1)
    return -picked.clamp_min(_PROB_FLOOR).log().mean()


def prototype_loss(embeds: DiffTensor, points: DiffTensor, labels: Sequence[int]) -> DiffTensor:
    """Mean squared distance of each embedding to its own class prototype."""
    _check_pair(embeds, points)
    labels = check_labels(labels, points.shape[0], embeds.shape[0])
    return _own_sq_distance(embeds, points, labels).mean()


def gcpl_loss(embeds: DiffTensor, points: DiffTensor, labels: Sequence[int], cfg: LossConfig) -> DiffTensor:
    labels = check_labels(labels, points.shape[0], embeds.shape[0])
    dce = _nll(_log_softmax(sq_euclidean(embeds, points) * (-cfg.gamma_temp)), labels)
    return dce + prototype_loss(embeds, points, labels) * cfg.beta


def rpl_probs(dists: DiffTensor, gamma_temp: float) -> DiffTensor:
    """Larger distance from a class's reciprocal point means higher probability of that class."""
    return _log_softmax(dists * gamma_temp).exp()


def rpl_ce(probs: DiffTensor, labels: Sequence[int]) -> DiffTensor:
    return dce_loss(probs, labels)


def rpl_open_reg(embeds: DiffTensor, points: DiffTensor, radii: Optional[DiffTensor], labels: Sequence[int]) -> DiffTensor:
    """MSE between the own-class squared distance and that class's radius."""
    _check_pair(embeds, points)
    labels = check_labels(labels, points.shape[0], embeds.shape[0])
    radius = _own_radius(radii, labels)
    return (_own_sq_distance(embeds, points, labels) - radius).square().mean()


def _rpl_terms(embeds, points, radii, labels, cfg: LossConfig) -> Tuple[DiffTensor, DiffTensor]:
    labels = check_labels(labels, points.shape[0], embeds.shape[0])
    closed = _nll(_log_softmax(sq_euclidean(embeds, points) * cfg.gamma_temp), labels)
    return closed, rpl_open_reg(embeds, points, radii, labels)


def rpl_loss(embeds: DiffTensor, points: DiffTensor, radii: Optional[DiffTensor], labels: Sequence[int], cfg: LossConfig) -> DiffTensor:
    closed, open_reg = _rpl_terms(embeds, points, radii, labels, cfg)
    return closed + open_reg * cfg.gamma_reg


def arpl_distance(embeds: DiffTensor, points: DiffTensor) -> DiffTensor:
    """d_e - d_d with d_e the squared Euclidean distance. May be negative."""
    return sq_euclidean(embeds, points) - _dot(embeds, points)


def arpl_probs(d: DiffTensor, gamma_temp: float) -> DiffTensor:
    return _log_softmax(d * gamma_temp).exp()


def arpl_open_reg(embeds: DiffTensor, points: DiffTensor, radii: Optional[DiffTensor], labels: Sequence[int]) -> DiffTensor:
    """Mean hinge max(d_e - R, 0) on the own-class reciprocal point."""
    _check_pair(embeds, points)
    labels = check_labels(labels, points.shape[0], embeds.shape[0])
    radius = _own_radius(radii, labels)
    return (_own_sq_distance(embeds, points, labels) - radius).clamp_min(0.0).mean()


def _arpl_terms(embeds, points, radii, labels, cfg: LossConfig) -> Tuple[DiffTensor, DiffTensor]:
    labels = check_labels(labels, points.shape[0], embeds.shape[0])
    closed = _nll(_log_softmax(arpl_distance(embeds, points) * cfg.gamma_temp), labels)
    return closed, arpl_open_reg(embeds, points, radii, labels)


def arpl_loss(embeds: DiffTensor, points: DiffTensor, radii: Optional[DiffTensor], labels: Sequence[int], cfg: LossConfig) -> DiffTensor:
    closed, open_reg = _arpl_terms(embeds, points, radii, labels, cfg)
    return closed + open_reg * cfg.gamma_reg


def ce_loss(logits: DiffTensor, labels: Sequence[int]) -> DiffTensor:
    labels = check_labels(labels, logits.shape[1], logits.shape[0])
    return _nll(_log_softmax(logits), labels)


def hybrid_loss(l_clf: DiffTensor, l_ossr: Optional[DiffTensor], alpha: float) -> DiffTensor:
    """L = L_clf + alpha * L_ossr; a missing style loss leaves L_clf."""
    if alpha < 0:
        raise LossError(f"alpha must be non-negative, got {alpha}")
    if l_ossr is None:
        return l_clf
    return l_clf + l_ossr * alpha


def head_loss(
    head: "EncoderHead",
    embeds: DiffTensor,
    labels: Sequence[int],
    cfg: LossConfig,
) -> Tuple[DiffTensor, Optional[DiffTensor]]:
    """
    Loss of one head given its embeddings.

    Returns:
        (loss, open-space term) where the open-space term is the unweighted
        regularizer for RPL/ARPL heads and None otherwise.
    """
    kind = head.config.loss_kind
    labels = check_labels(labels, head.config.n_categories, embeds.shape[0])
    if kind == LossKind.CE:
        return ce_loss(head.logits(embeds), labels), None

    points = head.prototypes.points
    radii = head.prototypes.radii
    if kind == LossKind.GCPL:
        return gcpl_loss(embeds, points, labels, cfg), None
    if kind in (LossKind.RPL, LossKind.ARPL):
        terms = _rpl_terms if kind == LossKind.RPL else _arpl_terms
        closed, open_reg = terms(embeds, points, radii, labels, cfg)
        return closed + open_reg * cfg.gamma_reg, open_reg
    raise LossError(f"Head has no loss for kind {kind}")


def method_name(clf_kind: LossKind, ossr_kind: LossKind) -> str:
    """Table label such as "CE_clf" (baseline) or "GCPL_clf+GCPL_ossr"."""
    clf_kind, ossr_kind = LossKind(clf_kind), LossKind(ossr_kind)
    name = f"{clf_kind.value}_clf"
    if ossr_kind != LossKind.NONE:
        name += f"+{ossr_kind.value}_ossr"
    return name


def parse_method(name: str) -> Tuple[LossKind, LossKind]:
    """Inverse of method_name."""
    parts = name.strip().split("+")
    try:
        if len(parts) not in (1, 2) or not parts[0].endswith("_clf"):
            raise ValueError
        clf_kind = LossKind(parts[0][: -len("_clf")])
        ossr_kind = LossKind.NONE
        if len(parts) == 2:
            if not parts[1].endswith("_ossr"):
                raise ValueError
            ossr_kind = LossKind(parts[1][: -len("_ossr")])
    except ValueError:
        raise LossError(f"Unrecognized method name: {name!r} (expected e.g. 'CE_clf' or 'GCPL_clf+GCPL_ossr')")
    if clf_kind == LossKind.NONE or (len(parts) == 2 and ossr_kind == LossKind.NONE):
        raise LossError(f"Unrecognized method name: {name!r}")
    return clf_kind, ossr_kind
