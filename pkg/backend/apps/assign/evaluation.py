"""
Pedestrian-detection evaluation: greedy detection matching, miss rate against
false positives per image, the log-average miss rate, occlusion subsets and
the supervision inconsistency rate of an assignment.
"""

import math
from dataclasses import dataclass, field
from typing import AbstractSet, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from apps.core.exceptions import DataError, EmptyEvaluationError, ValidationError
from .assignment import AssignmentResult, RankedProposal
from .geometry import BBox, iou_matrix

logger = structlog.get_logger(__name__)

MISS_RATE_FLOOR = 1e-10
FPPI_REFERENCES = np.logspace(-2.0, 0.0, 9)


@dataclass(frozen=True)
class Annotation:
    box: BBox
    visibility: float
    image_id: str

    def __post_init__(self):
        if not (0.0 <= self.visibility <= 1.0):
            raise DataError(f"Visibility {self.visibility} outside [0, 1]")

    @property
    def height(self) -> float:
        return self.box.height


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    image_id: str

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise DataError(f"Detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class SubsetSpec:
    name: str
    vis_low: float = 0.0
    vis_high: float = 1.0
    low_open: bool = False
    high_open: bool = False
    min_height: float = 0.0
    # Images qualify only when their GT heights spread by more than this many pixels
    lhv_threshold: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.vis_low <= self.vis_high <= 1.0):
            raise ValidationError(
                f"Subset {self.name} visibility interval must lie within [0, 1]",
                field_errors={'visibility': [f'[{self.vis_low}, {self.vis_high}]']},
            )
        if self.min_height < 0:
            raise ValidationError(f"Subset {self.name} min height must be >= 0",
                                  field_errors={'min_height': [str(self.min_height)]})

    def admits_visibility(self, visibility: float) -> bool:
        above = visibility > self.vis_low if self.low_open else visibility >= self.vis_low
        below = visibility < self.vis_high if self.high_open else visibility <= self.vis_high
        return above and below

    def admits(self, ann: Annotation) -> bool:
        return self.admits_visibility(ann.visibility) and ann.height > self.min_height


SUBSETS: Dict[str, SubsetSpec] = {
    'reasonable': SubsetSpec('reasonable', 0.65, 1.0, low_open=True, min_height=50.0),
    'heavy': SubsetSpec('heavy', 0.0, 0.65, low_open=True, high_open=True, min_height=50.0),
    'partial': SubsetSpec('partial', 0.65, 1.0, low_open=True, high_open=True, min_height=50.0),
    'bare': SubsetSpec('bare', 0.9, 1.0, low_open=True, min_height=50.0),
    'lhv': SubsetSpec('lhv', 0.2, 0.9, lhv_threshold=50.0),
    'all': SubsetSpec('all'),
}


def get_subset(name: str) -> SubsetSpec:
    try:
        return SUBSETS[name]
    except KeyError:
        raise ValidationError(f"Unknown subset '{name}'",
                              field_errors={'subset': [f"choose from {', '.join(SUBSETS)}"]})


@dataclass
class SubsetResult:
    kept: List[Annotation]
    # Filtered-out annotations of retained images; evaluated as ignore regions
    excluded: List[Annotation]
    dropped_images: frozenset = frozenset()
    # Images passing the LHV height-spread predicate; None for other subsets
    images: Optional[frozenset] = None


def _height_spread(anns: Iterable[Annotation]) -> Dict[str, float]:
    heights: Dict[str, List[float]] = {}
    for ann in anns:
        heights.setdefault(ann.image_id, []).append(ann.height)
    return {image: max(hs) - min(hs) for image, hs in heights.items()}


def filter_subset(anns: Sequence[Annotation], spec: SubsetSpec,
                  images: Optional[AbstractSet[str]] = None) -> SubsetResult:
    """
    Per-annotation visibility and height filter. For LHV specs the images are
    selected first, by the height spread of all their annotations, and the
    filter runs inside them. ``images`` reuses a selection from an earlier call
    so that re-filtering ``kept`` returns it unchanged.
    """
    if spec.lhv_threshold is None:
        return SubsetResult(kept=[a for a in anns if spec.admits(a)],
                            excluded=[a for a in anns if not spec.admits(a)])

    if images is None:
        spread = _height_spread(anns)
        images = {image for image, s in spread.items() if s > spec.lhv_threshold}
    inside = [a for a in anns if a.image_id in images]
    return SubsetResult(
        kept=[a for a in inside if spec.admits(a)],
        excluded=[a for a in inside if not spec.admits(a)],
        dropped_images=frozenset(a.image_id for a in anns if a.image_id not in images),
        images=frozenset(images),
    )


@dataclass
class EvalMatch:
    """Per-detection outcome (input order) and per-annotation matched flags."""

    scores: np.ndarray
    is_tp: np.ndarray
    is_ignored: np.ndarray
    gt_matched: np.ndarray
    image_ids: frozenset = field(default_factory=frozenset)

    @property
    def is_fp(self) -> np.ndarray:
        return ~self.is_tp & ~self.is_ignored

    @property
    def gt_count(self) -> int:
        return int(self.gt_matched.size)

    @property
    def image_count(self) -> int:
        return len(self.image_ids)


def _same_image(left: Sequence, right: Sequence) -> np.ndarray:
    a = np.array([x.image_id for x in left], dtype=object)
    b = np.array([x.image_id for x in right], dtype=object)
    if a.size == 0 or b.size == 0:
        return np.zeros((a.size, b.size), dtype=bool)
    return (a[:, None] == b[None, :]).astype(bool)


def match_detections_for_eval(dets: Sequence[Detection], gts: Sequence[Annotation], iou_thr: float,
                              ignore: Sequence[Annotation] = ()) -> EvalMatch:
    """
    Greedy matching in descending score order. Each detection takes the unmatched
    annotation of its image with the highest IoU at or above ``iou_thr``. Unmatched
    detections overlapping an ignore region by ``iou_thr`` count as neither TP nor FP.
    """
    if not (0.0 < iou_thr <= 1.0):
        raise ValidationError(f"IoU threshold {iou_thr} outside (0, 1]",
                              field_errors={'iou_thr': [str(iou_thr)]})

    scores = np.array([d.score for d in dets], dtype=np.float64)
    overlaps = np.where(_same_image(dets, gts), iou_matrix([d.box for d in dets], [g.box for g in gts]), 0.0)
    ignore_hits = np.where(
        _same_image(dets, ignore),
        iou_matrix([d.box for d in dets], [g.box for g in ignore]),
        0.0,
    ) >= iou_thr

    is_tp = np.zeros(len(dets), dtype=bool)
    is_ignored = np.zeros(len(dets), dtype=bool)
    gt_matched = np.zeros(len(gts), dtype=bool)

    # stable sort keeps input order among equal scores
    for k in np.argsort(-scores, kind='stable'):
        if len(gts):
            row = np.where(gt_matched, -1.0, overlaps[k])
            best = int(np.argmax(row))
            if row[best] >= iou_thr:
                is_tp[k] = True
                gt_matched[best] = True
                continue
        if ignore_hits.shape[1] and ignore_hits[k].any():
            is_ignored[k] = True

    image_ids = frozenset(d.image_id for d in dets) | frozenset(g.image_id for g in gts)
    return EvalMatch(scores=scores, is_tp=is_tp, is_ignored=is_ignored,
                     gt_matched=gt_matched, image_ids=image_ids)


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    fppi: float
    miss_rate: float


@dataclass
class MissRateCurve:
    """Operating points by ascending threshold, ending with the all-rejected point."""

    points: List[CurvePoint]

    def as_rows(self) -> List[dict]:
        return [{'threshold': p.threshold, 'fppi': p.fppi, 'miss': p.miss_rate} for p in self.points]

    def is_valid(self) -> bool:
        fppi = [p.fppi for p in self.points]
        miss = [p.miss_rate for p in self.points]
        return (all(b <= a for a, b in zip(fppi, fppi[1:]))
                and all(b >= a for a, b in zip(miss, miss[1:])))


def miss_rate_fppi_curve(match: EvalMatch, image_count: Optional[int] = None) -> MissRateCurve:
    images = match.image_count if image_count is None else image_count
    if match.gt_count == 0:
        raise EmptyEvaluationError("Miss rate is undefined without ground truth")
    if images < 1:
        raise EmptyEvaluationError("Evaluation needs at least one image")

    counted = ~match.is_ignored
    scores = match.scores[counted]
    tp = match.is_tp[counted]
    order = np.argsort(-scores, kind='stable')
    scores, tp = scores[order], tp[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)

    points = []
    distinct = np.unique(scores)
    for threshold in distinct:
        # last detection still accepted at this threshold
        last = int(np.searchsorted(-scores, -threshold, side='right')) - 1
        points.append(CurvePoint(
            threshold=float(threshold),
            fppi=float(cum_fp[last]) / images,
            miss_rate=1.0 - float(cum_tp[last]) / match.gt_count,
        ))
    points.append(CurvePoint(threshold=math.inf, fppi=0.0, miss_rate=1.0))
    return MissRateCurve(points=points)


def log_average_miss_rate(curve: MissRateCurve, floor: float = MISS_RATE_FLOOR) -> float:
    fppi = np.array([p.fppi for p in curve.points])
    miss = np.array([p.miss_rate for p in curve.points])
    sampled = []
    for ref in FPPI_REFERENCES:
        reachable = miss[fppi <= ref]
        sampled.append(reachable.min() if reachable.size else 1.0)
    return float(np.exp(np.mean(np.log(np.maximum(sampled, floor)))))


@dataclass(frozen=True)
class SubsetScore:
    name: str
    iou_thr: float
    mr2: float
    gt_count: int
    image_count: int

    def to_dict(self) -> dict:
        return {
            'subset': self.name,
            'iou_thr': self.iou_thr,
            'mr2': self.mr2,
            'gt_count': self.gt_count,
            'image_count': self.image_count,
        }


def evaluate_subset(dets: Sequence[Detection], anns: Sequence[Annotation], spec: SubsetSpec,
                    iou_thr: float = 0.5, floor: float = MISS_RATE_FLOOR) -> Tuple[SubsetScore, MissRateCurve]:
    """Filter, match and score one subset; images dropped by the subset lose their detections too."""
    subset = filter_subset(anns, spec)
    if not subset.kept:
        raise EmptyEvaluationError(f"No ground truth left in subset '{spec.name}'")
    kept_dets = [d for d in dets if d.image_id not in subset.dropped_images]
    match = match_detections_for_eval(kept_dets, subset.kept, iou_thr, ignore=subset.excluded)
    images = {a.image_id for a in anns} | {d.image_id for d in dets}
    image_count = len(images - set(subset.dropped_images))
    curve = miss_rate_fppi_curve(match, image_count=image_count)
    score = SubsetScore(
        name=spec.name,
        iou_thr=iou_thr,
        mr2=log_average_miss_rate(curve, floor),
        gt_count=len(subset.kept),
        image_count=image_count,
    )
    logger.info("Subset evaluated", **score.to_dict())
    return score, curve


SUITE: Tuple[Tuple[str, str, float], ...] = (
    ('R50', 'reasonable', 0.5),
    ('R75', 'reasonable', 0.75),
    ('heavy', 'heavy', 0.5),
    ('partial', 'partial', 0.5),
    ('bare', 'bare', 0.5),
    ('lhv', 'lhv', 0.5),
)


def evaluate_suite(dets: Sequence[Detection], anns: Sequence[Annotation],
                   floor: float = MISS_RATE_FLOOR) -> Dict[str, Optional[float]]:
    """MR-2 per standard column; a column whose subset is empty reports None."""
    summary: Dict[str, Optional[float]] = {}
    for column, subset, iou_thr in SUITE:
        try:
            score, _ = evaluate_subset(dets, anns, SUBSETS[subset], iou_thr, floor)
            summary[column] = score.mr2
        except EmptyEvaluationError:
            summary[column] = None
    return summary


def inconsistency_rate(result: AssignmentResult, proposals: Sequence[RankedProposal],
                       similarity_thr: float) -> float:
    """
    Fraction of similar positive pairs (IoU >= ``similarity_thr``) supervised by different GTs.
    """
    if not (0.0 < similarity_thr < 1.0):
        raise ValidationError(f"Similarity threshold {similarity_thr} outside (0, 1)",
                              field_errors={'similarity_thr': [str(similarity_thr)]})
    boxes = {p.id: p.box for p in proposals}
    positives = sorted(result.positives, key=lambda m: m.proposal_id)
    if len(positives) < 2:
        return 0.0

    overlaps = iou_matrix([boxes[m.proposal_id] for m in positives], [boxes[m.proposal_id] for m in positives])
    targets = np.array([m.gt_index for m in positives])
    upper = np.triu(np.ones_like(overlaps, dtype=bool), k=1)
    similar = upper & (overlaps >= similarity_thr)
    pairs = int(similar.sum())
    if pairs == 0:
        return 0.0
    split = similar & (targets[:, None] != targets[None, :])
    return float(split.sum()) / pairs
