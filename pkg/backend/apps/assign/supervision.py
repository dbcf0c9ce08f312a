"""
Training-signal formulas evaluated forward only: box regression targets,
the weighted assignment loss, the cost-prediction term and confidence rescoring.
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog

from apps.core.exceptions import (
    DataError, DegenerateBoxError, IdMismatchError, MissingPredictionError,
    ValidationError, validate_numeric_range,
)
from .assignment import AssignmentResult, RankedProposal
from .config import CostWeights, LossConfig
from .depthfield import DepthGrid, matching_cost
from .evaluation import Detection
from .geometry import BBox, center

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class ProposalPrediction:
    proposal_id: int
    class_score: float
    regressed_box: BBox
    predicted_cost: float

    def __post_init__(self):
        if not (0.0 <= self.class_score <= 1.0):
            raise DataError(f"Prediction {self.proposal_id} class score {self.class_score} outside [0, 1]")
        if not (math.isfinite(self.predicted_cost) and self.predicted_cost >= 0):
            raise DataError(f"Prediction {self.proposal_id} cost must be finite and non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    reg_loss: float
    cls_loss: float
    cost_loss: float
    total: float

    def to_dict(self) -> dict:
        return {
            'reg_loss': self.reg_loss,
            'cls_loss': self.cls_loss,
            'cost_loss': self.cost_loss,
            'total': self.total,
        }


@dataclass(frozen=True)
class CostRecord:
    """Predicted and recomputed matching cost of one detection."""

    id: int
    predicted_cost: float
    actual_cost: float


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def binary_cross_entropy(p: float, target: float, eps: float = 1e-12) -> float:
    p = min(max(p, eps), 1.0 - eps)
    return -(target * math.log(p) + (1.0 - target) * math.log(1.0 - p))


def smooth_l1(diff: np.ndarray, beta: float = 1.0) -> float:
    a = np.abs(diff)
    return float(np.where(a < beta, 0.5 * a * a / beta, a - 0.5 * beta).sum())


def regression_targets(proposal: BBox, gt: BBox) -> np.ndarray:
    """Center offsets scaled by proposal size, then log size ratios: ``(dx, dy, dw, dh)``."""
    if proposal.is_degenerate:
        raise DegenerateBoxError(f"Proposal {proposal.as_list()} has no area")
    if gt.is_degenerate:
        raise DegenerateBoxError(f"Target {gt.as_list()} has no area")
    pc, gc = center(proposal), center(gt)
    return np.array([
        (gc.x - pc.x) / proposal.width,
        (gc.y - pc.y) / proposal.height,
        math.log(gt.width / proposal.width),
        math.log(gt.height / proposal.height),
    ], dtype=np.float64)


def kappa_for_grid(grid: DepthGrid) -> float:
    return 1.0 / grid.diagonal_cells


def cost_loss(predicted_cost: float, target_cost: float, kappa: float, eps: float = 1e-12) -> float:
    return binary_cross_entropy(sigmoid(kappa * predicted_cost), sigmoid(kappa * target_cost), eps)


def _index_predictions(preds: Sequence[ProposalPrediction]) -> Dict[int, ProposalPrediction]:
    indexed: Dict[int, ProposalPrediction] = {}
    for pred in preds:
        if pred.proposal_id in indexed:
            raise DataError(f"Duplicate prediction for proposal {pred.proposal_id}")
        indexed[pred.proposal_id] = pred
    return indexed


def assignment_losses(preds: Sequence[ProposalPrediction], result: AssignmentResult,
                      gts: Sequence[BBox], proposals: Sequence[RankedProposal],
                      cfg: LossConfig = LossConfig(), grid: Optional[DepthGrid] = None) -> LossBreakdown:
    """
    Sum of the three training terms over one assignment.

    Regression and cost terms run over positives, classification over positives
    and negatives. ``kappa`` comes from ``cfg`` or, when unset, from ``grid``.
    """
    kappa = cfg.kappa
    if kappa is None:
        if grid is None:
            raise ValidationError(
                "Cost term needs kappa from the loss configuration or a depth grid",
                field_errors={'kappa': ['unset and no grid given']},
            )
        kappa = kappa_for_grid(grid)

    by_id = _index_predictions(preds)
    boxes = {p.id: p.box for p in proposals}

    reg = cls = cost = 0.0
    for match in result.positives:
        pred = by_id.get(match.proposal_id)
        if pred is None:
            raise MissingPredictionError(match.proposal_id)
        proposal_box = boxes[match.proposal_id]
        target = regression_targets(proposal_box, gts[match.gt_index])
        predicted = regression_targets(proposal_box, pred.regressed_box)
        reg += smooth_l1(predicted - target, cfg.smooth_l1_beta)
        cls += binary_cross_entropy(pred.class_score, 1.0, cfg.eps)
        cost += cost_loss(pred.predicted_cost, match.cost, kappa, cfg.eps)

    for proposal_id in result.negatives:
        pred = by_id.get(proposal_id)
        if pred is None:
            raise MissingPredictionError(proposal_id)
        cls += binary_cross_entropy(pred.class_score, 0.0, cfg.eps)

    total = cfg.alpha * reg + cfg.beta * cls + cfg.gamma * cost
    return LossBreakdown(reg_loss=reg, cls_loss=cls, cost_loss=cost, total=total)


def rescore_confidence(score: float, predicted_cost: float, actual_cost: float) -> float:
    """``score * (1.5 - sigmoid(|actual - predicted|))``; never raises the score."""
    validate_numeric_range(score, 0.0, 1.0, field_name='score')
    validate_numeric_range(predicted_cost, 0.0, field_name='predicted_cost')
    validate_numeric_range(actual_cost, 0.0, field_name='actual_cost')
    return score * (1.5 - sigmoid(abs(actual_cost - predicted_cost)))


def actual_matching_cost(proposal: BBox, regressed_box: BBox, grid: DepthGrid,
                         weights: CostWeights = CostWeights()) -> float:
    return matching_cost(proposal, regressed_box, grid, weights).total


def rescore_detections(detections: Sequence[Detection], costs: Sequence[CostRecord]) -> List[Detection]:
    """
    Rescore detections against cost records aligned by id, the detection's
    zero-based position. Every detection needs exactly one record.
    """
    by_id: Dict[int, CostRecord] = {}
    for record in costs:
        if record.id in by_id:
            raise IdMismatchError(detail=f"Cost record id {record.id} appears twice",
                                  record_id=record.id)
        by_id[record.id] = record

    rescored = []
    for index, det in enumerate(detections):
        record = by_id.pop(index, None)
        if record is None:
            raise IdMismatchError(index)
        score = rescore_confidence(det.score, record.predicted_cost, record.actual_cost)
        rescored.append(replace(det, score=score))
    if by_id:
        raise IdMismatchError(min(by_id))

    logger.debug("Detections rescored", count=len(rescored))
    return rescored
