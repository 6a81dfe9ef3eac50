"""
Finite-difference verification of every loss on small randomized models.

Each case builds a tiny dual-encoder model (3 channels, 24 samples), moves
its prototypes and radii to random positions so every branch of the losses
is active (hinges on both sides of zero), and compares backward() with
central differences for every parameter, prototypes and radii included.
"""

import logging
from contextlib import contextmanager
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

from posr.encoder import DualEncoderModel, build_model
from posr.losses import head_loss, hybrid_loss
from posr.models import BackboneConfig, HeadConfig, LossConfig, LossKind
from posr.rng import make_rng
from posr.tensor import PRIMITIVES, DiffTensor, GradCheckReport, Primitive, grad_check

logger = logging.getLogger(__name__)

# (case name, clf kind, ossr kind)
GRADCHECK_CASES: List[Tuple[str, LossKind, LossKind]] = [
    ("CE", LossKind.CE, LossKind.NONE),
    ("GCPL", LossKind.GCPL, LossKind.NONE),
    ("RPL", LossKind.RPL, LossKind.NONE),
    ("ARPL", LossKind.ARPL, LossKind.NONE),
    ("hybrid", LossKind.GCPL, LossKind.ARPL),
]

_BACKBONE = BackboneConfig(
    n_channels=3, n_samples=24, temporal_kernel=3, n_temporal_filters=2,
    n_spatial_filters=2, pool_size=2, n_extra_blocks=1,
)
_N_CLASSES = 3
_N_SUBJECTS = 4
_BATCH = 5


class GradCheckCase(NamedTuple):
    name: str
    report: GradCheckReport


@contextmanager
def override_backward_rules(overrides: Optional[Dict[str, Primitive]]) -> Iterator[None]:
    """Temporarily replace entries of the primitive registry (used to inject faulty rules)."""
    saved = {kind: PRIMITIVES[kind] for kind in (overrides or {})}
    try:
        PRIMITIVES.update(overrides or {})
        yield
    finally:
        PRIMITIVES.update(saved)


def _randomized_model(clf: LossKind, ossr: LossKind, seed: int) -> DualEncoderModel:
    loss = LossConfig(clf_kind=clf, ossr_kind=ossr, gamma_temp=0.7, beta=0.05, gamma_reg=0.3, alpha=0.5)
    style = HeadConfig.for_loss(ossr, _N_SUBJECTS, embed_dim=3) if ossr != LossKind.NONE else None
    model = build_model(
        _BACKBONE,
        HeadConfig.for_loss(clf, _N_CLASSES, embed_dim=3),
        style,
        seed=seed,
        loss_config=loss,
        source_subjects=list(range(_N_SUBJECTS)) if style is not None else None,
    )
    rng = make_rng(seed, "gradcheck-points")
    for head in (model.semantic_head, model.style_head):
        if head is None or head.prototypes is None:
            continue
        head.prototypes.points.values[...] = rng.normal(0.0, 1.0, head.prototypes.points.shape)
        if head.prototypes.radii is not None:
            head.prototypes.radii.values[...] = rng.uniform(0.5, 4.0, head.prototypes.radii.shape)
    return model


def check_case(name: str, clf: LossKind, ossr: LossKind, seed: int = 0, h: float = 1e-5, tol: float = 1e-4) -> GradCheckCase:
    model = _randomized_model(clf, ossr, seed)
    rng = make_rng(seed, "gradcheck-data", name)
    data = rng.normal(0.0, 2.0, (_BATCH, _BACKBONE.n_channels, _BACKBONE.n_samples))
    classes = rng.integers(0, _N_CLASSES, _BATCH)
    subjects = rng.integers(0, _N_SUBJECTS, _BATCH)
    cfg = model.loss_config

    def build_loss() -> DiffTensor:
        semantic, style = model.forward(data)
        l_clf, _ = head_loss(model.semantic_head, semantic, classes, cfg)
        l_ossr = head_loss(model.style_head, style, subjects, cfg)[0] if style is not None else None
        return hybrid_loss(l_clf, l_ossr, cfg.alpha)

    report = grad_check(build_loss, model.parameters(), h=h, tol=tol)
    return GradCheckCase(name, report)


def run_gradcheck_suite(
    seed: int = 0,
    h: float = 1e-5,
    tol: float = 1e-4,
    rule_overrides: Optional[Dict[str, Primitive]] = None,
) -> List[GradCheckCase]:
    """
    Check CE, GCPL, RPL, ARPL and the hybrid objective.

    Args:
        rule_overrides: Registry entries swapped in for the duration of the suite
    """
    results = []
    with override_backward_rules(rule_overrides):
        for name, clf, ossr in GRADCHECK_CASES:
            case = check_case(name, clf, ossr, seed=seed, h=h, tol=tol)
            status = "passed" if case.report.passed else f"FAILED on {case.report.failures}"
            logger.info(f"🧮 {name}: max relative error {case.report.worst:.2e} ({status})")
            results.append(case)
    return results


def format_gradcheck_report(cases: List[GradCheckCase]) -> str:
    lines = []
    for case in cases:
        status = "PASS" if case.report.passed else "FAIL"
        lines.append(f"{case.name:<8} {status}  max_rel_error={case.report.worst:.3e}  tol={case.report.tol:g}")
        for param in case.report.failures:
            lines.append(f"         {param}: {case.report.max_rel_error[param]:.3e}")
    return "\n".join(lines)
