"""
Ground-truth to proposal assignment.

``assign_depth_guided`` runs the capacity-limited greedy search, with a pending
set of evicted proposals, over proposals that pass the IoU candidate gate;
``assign_iou`` is the IoU-threshold baseline and
``assign_per_level`` repeats the depth-guided search inside each pyramid level.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from apps.core.exceptions import DataError, EmptyInputError, InternalError
from .config import AssignerConfig
from .depthfield import DepthGrid, PathCost, matching_cost
from .geometry import BBox, assign_level, box_scale, iou_matrix

logger = structlog.get_logger(__name__)


class Role(Enum):
    POSITIVE = 'pos'
    NEGATIVE = 'neg'
    PENDING = 'pend'
    IGNORED = 'ignored'


@dataclass(frozen=True)
class RankedProposal:
    id: int
    box: BBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise DataError(f"Proposal {self.id} confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class Match:
    proposal_id: int
    gt_index: int
    cost: float
    path: Optional[PathCost] = None


@dataclass(frozen=True)
class Eviction:
    proposal_id: int
    gt_index: int
    cost: float


@dataclass
class AssignmentResult:
    assigner: str
    positives: List[Match] = field(default_factory=list)
    negatives: List[int] = field(default_factory=list)
    pending: List[int] = field(default_factory=list)
    ignored: List[int] = field(default_factory=list)
    evictions: List[Eviction] = field(default_factory=list)
    capacity: Dict[int, int] = field(default_factory=dict)
    unmatched_gts: List[int] = field(default_factory=list)

    @property
    def positive_ids(self) -> List[int]:
        return [m.proposal_id for m in self.positives]

    def gt_of(self, proposal_id: int) -> Optional[int]:
        for match in self.positives:
            if match.proposal_id == proposal_id:
                return match.gt_index
        return None

    def role_map(self) -> Dict[int, Role]:
        roles = {pid: Role.IGNORED for pid in self.ignored}
        roles.update({pid: Role.PENDING for pid in self.pending})
        roles.update({pid: Role.NEGATIVE for pid in self.negatives})
        roles.update({m.proposal_id: Role.POSITIVE for m in self.positives})
        return roles

    def positives_per_gt(self) -> Dict[int, int]:
        counts: Dict[int, int] = defaultdict(int)
        for match in self.positives:
            counts[match.gt_index] += 1
        return dict(counts)

    def to_dict(self) -> dict:
        return {
            'assigner': self.assigner,
            'positives': [
                {'proposal_id': m.proposal_id, 'gt_index': m.gt_index, 'cost': m.cost}
                for m in self.positives
            ],
            'negatives': list(self.negatives),
            'pending': list(self.pending),
            'ignored': list(self.ignored),
            'evictions': [
                {'proposal_id': e.proposal_id, 'gt_index': e.gt_index, 'cost': e.cost}
                for e in self.evictions
            ],
            'capacity': {str(k): v for k, v in sorted(self.capacity.items())},
            'unmatched_gts': list(self.unmatched_gts),
        }


def capacity_for(n_pos: int, gt_count: int) -> int:
    return max(1, n_pos // gt_count)


def _check_inputs(gts: Sequence[BBox], proposals: Sequence[RankedProposal]) -> None:
    if not gts:
        raise EmptyInputError("Assignment needs at least one ground-truth box")
    if not proposals:
        raise EmptyInputError("Assignment needs at least one proposal")
    ids = [p.id for p in proposals]
    if len(set(ids)) != len(ids):
        raise DataError("Proposal ids must be unique")


def _ranked(proposals: Sequence[RankedProposal]) -> List[RankedProposal]:
    """Descending confidence, lower id first on ties."""
    return sorted(proposals, key=lambda p: (-p.confidence, p.id))


@dataclass
class _ClaimOutcome:
    members: Dict[int, List[int]]
    evictions: List[Tuple[int, int, float]]


def _sequential_claims(totals: np.ndarray, eligible: np.ndarray, gt_indices: Sequence[int],
                       capacity: int, budget: int) -> _ClaimOutcome:
    """
    Greedy claim over a cost matrix ``[gt, proposal]`` whose columns are in rank
    order (descending confidence, then id).

    Each proposal in turn goes to its cheapest eligible GT (lower GT index on
    ties). When that GT is full, the candidate and the GT's members are
    re-compared and the costliest of them is evicted to the pending set; the
    later-ranked proposal loses cost ties. Once ``budget`` positives exist,
    a GT with spare capacity and no members cannot take anything more.

    A backfill follows: while budget remains, GTs below capacity take turns in
    index order claiming their cheapest eligible proposal still left over
    (evicted or never claimed), until no such GT can claim.
    """
    n_gt, n_prop = totals.shape
    members: Dict[int, List[int]] = {g: [] for g in range(n_gt)}
    evictions: List[Tuple[int, int, float]] = []
    claimed = 0

    for pos in range(n_prop):
        column = np.where(eligible[:, pos], totals[:, pos], np.inf)
        if not np.isfinite(column).any():
            continue
        g = int(np.argmin(column))

        if len(members[g]) < capacity and claimed < budget:
            members[g].append(pos)
            claimed += 1
            continue
        if not members[g]:
            continue

        # members are ranked before pos, so pos loses ties
        worst = max(members[g] + [pos], key=lambda q: (totals[g, q], q))
        if worst != pos:
            members[g].remove(worst)
            members[g].append(pos)
        evictions.append((worst, gt_indices[g], float(totals[g, worst])))

    taken = {q for positions in members.values() for q in positions}
    progressed = True
    while progressed and claimed < budget:
        progressed = False
        for g in range(n_gt):
            if len(members[g]) >= capacity or claimed >= budget:
                continue
            free = [q for q in range(n_prop) if q not in taken and eligible[g, q]]
            if not free:
                continue
            best = min(free, key=lambda q: (totals[g, q], q))
            members[g].append(best)
            taken.add(best)
            claimed += 1
            progressed = True

    return _ClaimOutcome(members=members, evictions=evictions)


def _cost_block(gts: Sequence[BBox], gt_indices: Sequence[int], ranked: Sequence[RankedProposal],
                grid: DepthGrid, cfg: AssignerConfig) -> Tuple[np.ndarray, List[List[PathCost]]]:
    paths = [
        [matching_cost(gts[g], p.box, grid, cfg.cost_weights) for p in ranked]
        for g in gt_indices
    ]
    totals = np.array([[c.total for c in row] for row in paths], dtype=np.float64)
    return totals.reshape(len(gt_indices), len(ranked)), paths


def _admitted(gts: Sequence[BBox], ranked: Sequence[RankedProposal], cfg: AssignerConfig) -> np.ndarray:
    """Proposals overlapping some GT by at least ``candidate_iou_thr``."""
    if cfg.candidate_iou_thr is None:
        return np.ones(len(ranked), dtype=bool)
    best = iou_matrix(gts, [p.box for p in ranked]).max(axis=0)
    return best >= cfg.candidate_iou_thr


def _run_level(gts: Sequence[BBox], gt_indices: List[int], ranked: List[RankedProposal],
               grid: DepthGrid, cfg: AssignerConfig, budget: int):
    capacity = capacity_for(cfg.n_pos, len(gt_indices))
    if not ranked:
        return [], [], {g: capacity for g in gt_indices}

    totals, paths = _cost_block(gts, gt_indices, ranked, grid, cfg)
    eligible = np.isfinite(totals) & (totals <= cfg.cost_ceiling) & _admitted(gts, ranked, cfg)[None, :]
    outcome = _sequential_claims(totals, eligible, gt_indices, capacity, budget)

    matches = []
    for local_g, positions in outcome.members.items():
        for pos in positions:
            matches.append(Match(
                proposal_id=ranked[pos].id,
                gt_index=gt_indices[local_g],
                cost=float(totals[local_g, pos]),
                path=paths[local_g][pos],
            ))
    evictions = [Eviction(ranked[pos].id, g, cost) for pos, g, cost in outcome.evictions]
    return matches, evictions, {g: capacity for g in gt_indices}


def _max_iou_by_proposal(gts: Sequence[BBox], proposals: Sequence[RankedProposal]) -> Dict[int, float]:
    overlaps = iou_matrix(gts, [p.box for p in proposals])
    best = overlaps.max(axis=0) if overlaps.size else np.zeros(len(proposals))
    return {p.id: float(v) for p, v in zip(proposals, best)}


def _draw(rng: np.random.Generator, pool: Sequence[int], count: int) -> List[int]:
    if count <= 0 or not pool:
        return []
    picks = rng.choice(len(pool), size=min(count, len(pool)), replace=False)
    return [pool[int(i)] for i in picks]


def fill_negatives(partial: AssignmentResult, gts: Sequence[BBox], proposals: Sequence[RankedProposal],
                   cfg: AssignerConfig) -> AssignmentResult:
    """
    Sample up to ``n_neg`` negatives: at most half from the pending set, the rest
    from unassigned proposals whose best IoU stays below ``iou_neg_thr``.
    Pending proposals back-fill when the low-IoU pool runs short.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    positive_ids = set(partial.positive_ids)
    pending = sorted(set(partial.pending) - positive_ids)
    max_iou = _max_iou_by_proposal(gts, proposals)
    pool = sorted(
        p.id for p in proposals
        if p.id not in positive_ids and p.id not in set(pending) and max_iou[p.id] < cfg.iou_neg_thr
    )

    from_pending = _draw(rng, pending, min(math.ceil(cfg.n_neg / 2), len(pending)))
    from_pool = _draw(rng, pool, cfg.n_neg - len(from_pending))
    shortfall = cfg.n_neg - len(from_pending) - len(from_pool)
    if shortfall > 0:
        taken = set(from_pending)
        from_pending += _draw(rng, [pid for pid in pending if pid not in taken], shortfall)

    negatives = sorted(from_pending + from_pool)
    negative_set = set(negatives)
    remaining_pending = [pid for pid in pending if pid not in negative_set]
    labelled = positive_ids | negative_set | set(remaining_pending)
    ignored = sorted(p.id for p in proposals if p.id not in labelled)

    logger.debug(
        "Negatives filled",
        assigner=partial.assigner,
        from_pending=len(from_pending),
        from_pool=len(from_pool),
        pool_size=len(pool),
    )

    return AssignmentResult(
        assigner=partial.assigner,
        positives=list(partial.positives),
        negatives=negatives,
        pending=remaining_pending,
        ignored=ignored,
        evictions=list(partial.evictions),
        capacity=dict(partial.capacity),
        unmatched_gts=list(partial.unmatched_gts),
    )


def _unmatched(gt_count: int, matches: Iterable[Match]) -> List[int]:
    hit = {m.gt_index for m in matches}
    return [g for g in range(gt_count) if g not in hit]


def _leftover(evictions: Sequence[Eviction], matches: Iterable[Match]) -> List[int]:
    """Evicted proposals the backfill did not re-home."""
    placed = {m.proposal_id for m in matches}
    return [e.proposal_id for e in evictions if e.proposal_id not in placed]


def assign_depth_guided(gts: Sequence[BBox], proposals: Sequence[RankedProposal], grid: DepthGrid,
                        cfg: AssignerConfig = AssignerConfig()) -> AssignmentResult:
    _check_inputs(gts, proposals)
    ranked = _ranked(proposals)
    matches, evictions, capacity = _run_level(gts, list(range(len(gts))), ranked, grid, cfg, cfg.n_pos)

    partial = AssignmentResult(
        assigner='depth',
        positives=matches,
        pending=_leftover(evictions, matches),
        evictions=evictions,
        capacity=capacity,
        unmatched_gts=_unmatched(len(gts), matches),
    )
    return fill_negatives(partial, gts, proposals, cfg)


def assign_per_level(gts: Sequence[BBox], proposals: Sequence[RankedProposal], grid: DepthGrid,
                     cfg: AssignerConfig = AssignerConfig()) -> AssignmentResult:
    """
    Depth-guided search restricted to same-level pairs. Levels run from finest to
    coarsest against one shared positive budget of ``n_pos``.
    """
    _check_inputs(gts, proposals)
    ranges = cfg.level_ranges
    gt_levels: Dict[str, List[int]] = defaultdict(list)
    for g, box in enumerate(gts):
        gt_levels[assign_level(box_scale(box), ranges)].append(g)
    proposal_levels: Dict[str, List[RankedProposal]] = defaultdict(list)
    for p in _ranked(proposals):
        proposal_levels[assign_level(box_scale(p.box), ranges)].append(p)

    matches: List[Match] = []
    evictions: List[Eviction] = []
    capacity: Dict[int, int] = {}
    for level in ranges.names:
        level_gts = gt_levels.get(level)
        if not level_gts:
            continue
        budget = cfg.n_pos - len(matches)
        level_matches, level_evictions, level_capacity = _run_level(
            gts, level_gts, proposal_levels.get(level, []), grid, cfg, budget
        )
        matches.extend(level_matches)
        evictions.extend(level_evictions)
        capacity.update(level_capacity)

    partial = AssignmentResult(
        assigner='depth-per-level',
        positives=matches,
        pending=_leftover(evictions, matches),
        evictions=evictions,
        capacity=capacity,
        unmatched_gts=_unmatched(len(gts), matches),
    )
    return fill_negatives(partial, gts, proposals, cfg)


def assign_iou(gts: Sequence[BBox], proposals: Sequence[RankedProposal],
               cfg: AssignerConfig = AssignerConfig()) -> AssignmentResult:
    _check_inputs(gts, proposals)
    overlaps = iou_matrix(gts, [p.box for p in proposals])
    best_gt = overlaps.argmax(axis=0)
    best_iou = overlaps.max(axis=0)

    candidates = [
        (float(best_iou[k]), p.id, int(best_gt[k]))
        for k, p in enumerate(proposals) if best_iou[k] >= cfg.iou_pos_thr
    ]
    candidates.sort(key=lambda c: (-c[0], c[1]))
    kept = candidates[:cfg.n_pos]
    positives = [Match(proposal_id=pid, gt_index=g, cost=1.0 - value) for value, pid, g in kept]

    positive_ids = {m.proposal_id for m in positives}
    pool = sorted(p.id for k, p in enumerate(proposals) if best_iou[k] < cfg.iou_neg_thr)
    rng = np.random.default_rng(cfg.rng_seed)
    negatives = sorted(_draw(rng, pool, cfg.n_neg))
    labelled = positive_ids | set(negatives)
    ignored = sorted(p.id for p in proposals if p.id not in labelled)

    return AssignmentResult(
        assigner='iou',
        positives=positives,
        negatives=negatives,
        pending=[],
        ignored=ignored,
        evictions=[],
        capacity={g: cfg.n_pos for g in range(len(gts))},
        unmatched_gts=_unmatched(len(gts), positives),
    )


def run_assigner(name: str, gts: Sequence[BBox], proposals: Sequence[RankedProposal],
                 grid: DepthGrid, cfg: AssignerConfig) -> AssignmentResult:
    if name == 'iou':
        return assign_iou(gts, proposals, cfg)
    if name == 'depth':
        return assign_depth_guided(gts, proposals, grid, cfg)
    if name == 'depth-per-level':
        return assign_per_level(gts, proposals, grid, cfg)
    raise DataError(f"Unknown assigner '{name}'")


def check_assignment_invariants(result: AssignmentResult, proposals: Sequence[RankedProposal],
                                cfg: AssignerConfig) -> None:
    """
    Partition, capacity, budget and eviction-dominance checks; raises InternalError on violation.
    """
    positive_ids = result.positive_ids
    groups = {
        'positives': set(positive_ids),
        'negatives': set(result.negatives),
        'pending': set(result.pending),
        'ignored': set(result.ignored),
    }
    problems = []
    if len(positive_ids) != len(groups['positives']):
        problems.append('proposal assigned to more than one gt')
    names = list(groups)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            if groups[a] & groups[b]:
                problems.append(f'{a} and {b} overlap')
    covered = set().union(*groups.values())
    if covered != {p.id for p in proposals}:
        problems.append('roles do not cover every proposal exactly')

    for g, count in result.positives_per_gt().items():
        if count > result.capacity.get(g, 0):
            problems.append(f'gt {g} holds {count} positives over capacity {result.capacity.get(g)}')
    if len(positive_ids) > cfg.n_pos:
        problems.append(f'{len(positive_ids)} positives exceed n_pos {cfg.n_pos}')
    if len(result.negatives) > cfg.n_neg:
        problems.append(f'{len(result.negatives)} negatives exceed n_neg {cfg.n_neg}')

    final_costs: Dict[int, List[float]] = defaultdict(list)
    for match in result.positives:
        final_costs[match.gt_index].append(match.cost)
    for eviction in result.evictions:
        if any(cost > eviction.cost for cost in final_costs.get(eviction.gt_index, [])):
            problems.append(f'eviction of proposal {eviction.proposal_id} is not the costliest for gt {eviction.gt_index}')

    if problems:
        raise InternalError(
            f"Assignment invariants violated: {'; '.join(problems)}",
            extra_data={'assigner': result.assigner},
        )
