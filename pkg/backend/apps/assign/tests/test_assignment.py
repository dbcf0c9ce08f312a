import numpy as np
import pytest

from apps.assign.assignment import (
    AssignmentResult, Match, RankedProposal, Role, assign_depth_guided, assign_iou, assign_per_level,
    capacity_for, check_assignment_invariants, fill_negatives, run_assigner,
)
from apps.assign.config import AssignerConfig
from apps.assign.depthfield import DepthGrid, matching_cost
from apps.assign.evaluation import inconsistency_rate
from apps.assign.geometry import BBox, assign_level, box_from_center, box_scale, iou_matrix
from apps.assign.scenesim import FIGURE1_SIMILARITY, figure1_assigner_config
from apps.core.exceptions import DataError, EmptyInputError, InternalError
from .factories import RankedProposalFactory


def proposal(pid, cx, cy, w=40.0, h=100.0, confidence=0.5):
    return RankedProposal(id=pid, box=box_from_center(cx, cy, w, h), confidence=confidence)


def ungated(**kwargs):
    return AssignerConfig(candidate_iou_thr=None, **kwargs)


class TestInputs:
    def test_capacity(self):
        assert capacity_for(4, 2) == 2
        assert capacity_for(256, 3) == 85
        assert capacity_for(3, 5) == 1

    def test_no_ground_truth(self, flat_grid):
        with pytest.raises(EmptyInputError):
            assign_depth_guided([], [RankedProposalFactory()], flat_grid)

    def test_no_proposals(self, flat_grid):
        with pytest.raises(EmptyInputError):
            assign_iou([BBox(0, 0, 10, 10)], [])

    def test_duplicate_proposal_ids(self, flat_grid):
        boxes = [RankedProposalFactory(id=3), RankedProposalFactory(id=3)]
        with pytest.raises(DataError):
            assign_depth_guided([BBox(0, 0, 40, 100)], boxes, flat_grid)

    def test_confidence_must_be_a_probability(self):
        with pytest.raises(DataError):
            RankedProposalFactory(confidence=1.5)

    def test_unknown_assigner(self, flat_grid):
        with pytest.raises(DataError):
            run_assigner('hungarian', [BBox(0, 0, 40, 100)], [RankedProposalFactory()], flat_grid,
                         AssignerConfig())


class TestDepthGuided:
    def test_capacity_keeps_the_cheapest(self, flat_grid):
        gt = box_from_center(100, 100, 40, 100)
        proposals = [proposal(0, 101, 100), proposal(1, 102, 100), proposal(2, 103, 100)]
        result = assign_depth_guided([gt], proposals, flat_grid, AssignerConfig(n_pos=2, n_neg=4))
        assert sorted(result.positive_ids) == [0, 1]
        assert result.role_map()[2] in (Role.NEGATIVE, Role.PENDING)

    def test_later_cheaper_proposal_evicts(self, flat_grid):
        gt = box_from_center(100, 100, 40, 100)
        proposals = [
            proposal(0, 101, 100, confidence=0.2),
            proposal(1, 102, 100, confidence=0.5),
            proposal(2, 103, 100, confidence=0.9),
        ]
        result = assign_depth_guided([gt], proposals, flat_grid, AssignerConfig(n_pos=2, n_neg=0))
        assert sorted(result.positive_ids) == [0, 1]
        assert [(e.proposal_id, e.gt_index, e.cost) for e in result.evictions] == [(2, 0, 3.0)]
        assert result.pending == [2]
        check_assignment_invariants(result, proposals, AssignerConfig(n_pos=2, n_neg=0))

    def test_rejected_candidate_goes_to_pending(self, flat_grid):
        gt = box_from_center(100, 100, 40, 100)
        proposals = [proposal(0, 101, 100, 0.9), proposal(1, 109, 100, confidence=0.1)]
        result = assign_depth_guided([gt], proposals, flat_grid, AssignerConfig(n_pos=1, n_neg=0))
        assert result.positive_ids == [0]
        assert result.pending == [1]

    def test_depth_plateau_breaks_pixel_ties(self, make_grid):
        values = np.full((20, 40), 30.0)
        values[:, :21] = 10.0
        grid = make_grid(values)
        gts = [box_from_center(40, 40, 20, 40), box_from_center(120, 40, 20, 40)]
        result = assign_depth_guided(gts, [proposal(0, 80, 40, 20, 40)], grid, ungated(n_pos=2, n_neg=0))
        assert result.gt_of(0) == 0

    def test_plateau_on_the_other_side(self, make_grid):
        values = np.full((20, 40), 30.0)
        values[:, :20] = 10.0
        grid = make_grid(values)
        gts = [box_from_center(40, 40, 20, 40), box_from_center(120, 40, 20, 40)]
        result = assign_depth_guided(gts, [proposal(0, 80, 40, 20, 40)], grid, ungated(n_pos=2, n_neg=0))
        assert result.gt_of(0) == 1

    def test_flat_grid_matches_nearest_centre(self, flat_grid, rng):
        gt = box_from_center(100, 100, 40, 80)
        for _ in range(50):
            centers = rng.uniform(20, 180, size=(6, 2))
            confidences = rng.uniform(0, 1, size=6)
            proposals = [proposal(k, x, y, 30, 60, float(c)) for k, ((x, y), c) in enumerate(zip(centers, confidences))]
            result = assign_depth_guided([gt], proposals, flat_grid, ungated(n_pos=1, n_neg=0))
            expected = min(proposals, key=lambda p: (matching_cost(gt, p.box, flat_grid).total, -p.confidence, p.id))
            assert result.positive_ids == [expected.id]

    def test_positive_budget_across_gts(self, flat_grid):
        gts = [box_from_center(30, 30, 20, 40), box_from_center(100, 30, 20, 40), box_from_center(170, 30, 20, 40)]
        proposals = [proposal(k, 30 + 70 * k, 31, 20, 40, 0.9 - 0.1 * k) for k in range(3)]
        result = assign_depth_guided(gts, proposals, flat_grid, AssignerConfig(n_pos=2, n_neg=0))
        assert sorted(result.positive_ids) == [0, 1]
        assert result.unmatched_gts == [2]
        assert result.capacity == {0: 1, 1: 1, 2: 1}

    def test_empty_gt_takes_an_evicted_proposal(self, flat_grid):
        gts = [box_from_center(50, 100, 40, 100), box_from_center(130, 100, 40, 100)]
        proposals = [proposal(0, 51, 100, confidence=0.9), proposal(1, 50, 120, confidence=0.5)]
        cfg = AssignerConfig(n_pos=2, n_neg=0)
        result = assign_depth_guided(gts, proposals, flat_grid, cfg)
        assert [(m.proposal_id, m.gt_index, m.cost) for m in result.positives] == [(0, 0, 1.0), (1, 1, 100.0)]
        assert [(e.proposal_id, e.gt_index, e.cost) for e in result.evictions] == [(1, 0, 20.0)]
        assert result.pending == []
        assert result.unmatched_gts == []
        check_assignment_invariants(result, proposals, cfg)

    def test_low_overlap_proposals_stay_out_of_the_search(self, flat_grid):
        gt = box_from_center(100, 100, 40, 100)
        proposals = [proposal(0, 101, 100), proposal(1, 100, 150)]
        gated = assign_depth_guided([gt], proposals, flat_grid, AssignerConfig(n_pos=4, n_neg=0))
        assert gated.positive_ids == [0]
        assert gated.role_map()[1] == Role.IGNORED
        open_search = assign_depth_guided([gt], proposals, flat_grid, ungated(n_pos=4, n_neg=0))
        assert sorted(open_search.positive_ids) == [0, 1]

    def test_cost_ceiling(self, flat_grid):
        gt = box_from_center(100, 100, 40, 100)
        proposals = [proposal(0, 110, 100), proposal(1, 102, 100)]
        result = assign_depth_guided([gt], proposals, flat_grid, AssignerConfig(n_pos=4, n_neg=0, max_cost=5.0))
        assert result.positive_ids == [1]

    def test_matches_carry_their_path_cost(self, flat_grid):
        gt = box_from_center(100, 100, 40, 100)
        result = assign_depth_guided([gt], [proposal(0, 104, 97)], flat_grid, AssignerConfig(n_neg=0))
        match = result.positives[0]
        assert match.cost == 7.0
        assert (match.path.d, match.path.z) == (7.0, 0.0)


class TestFigure1:
    def test_depth_guided_unites_the_occluding_pair(self, figure1):
        result = assign_depth_guided(figure1.gt_boxes, figure1.proposals, figure1.depth, figure1_assigner_config())
        assert [result.gt_of(pid) for pid in range(4)] == [1, 1, 0, 0]
        assert result.pending == [] and result.evictions == []
        assert inconsistency_rate(result, figure1.proposals, FIGURE1_SIMILARITY) == 0.0

    def test_normalized_costs_agree(self, figure1):
        result = assign_depth_guided(figure1.gt_boxes, figure1.proposals, figure1.depth,
                                     figure1_assigner_config(normalize=True))
        assert [result.gt_of(pid) for pid in range(4)] == [1, 1, 0, 0]

    def test_iou_baseline_splits_the_pair(self, figure1):
        result = assign_iou(figure1.gt_boxes, figure1.proposals, figure1_assigner_config())
        assert (result.gt_of(0), result.gt_of(1)) == (0, 1)
        assert inconsistency_rate(result, figure1.proposals, FIGURE1_SIMILARITY) == 1.0

    def test_repeat_runs_are_identical(self, figure1):
        cfg = figure1_assigner_config()
        first = assign_depth_guided(figure1.gt_boxes, figure1.proposals, figure1.depth, cfg)
        second = assign_depth_guided(figure1.gt_boxes, figure1.proposals, figure1.depth, cfg)
        assert first.to_dict() == second.to_dict()


class TestIoUBaseline:
    def test_identical_box_is_a_zero_cost_positive(self):
        gt = BBox(0, 0, 10, 10)
        result = assign_iou([gt], [RankedProposal(id=0, box=gt, confidence=0.3)])
        assert result.positives == [Match(proposal_id=0, gt_index=0, cost=0.0)]

    def test_low_overlap_is_a_negative(self):
        result = assign_iou([BBox(0, 0, 10, 10)], [RankedProposal(id=0, box=BBox(8, 0, 18, 10), confidence=0.3)])
        assert result.positives == []
        assert result.negatives == [0]

    def test_middle_band_is_ignored(self):
        # IoU 0.4 sits between the two thresholds
        result = assign_iou([BBox(0, 0, 10, 10)], [RankedProposal(id=0, box=BBox(0, 0, 10, 4), confidence=0.3)])
        assert result.ignored == [0]

    def test_highest_overlap_wins(self):
        gts = [BBox(0, 0, 100, 100), BBox(20, 0, 120, 100)]
        result = assign_iou(gts, [RankedProposal(id=0, box=BBox(5, 0, 105, 100), confidence=0.5)])
        assert result.gt_of(0) == 0

    def test_truncates_to_the_best_overlaps(self):
        gt = BBox(0, 0, 100, 100)
        proposals = [
            RankedProposal(id=0, box=BBox(0, 0, 100, 80), confidence=0.9),
            RankedProposal(id=1, box=gt, confidence=0.1),
            RankedProposal(id=2, box=BBox(0, 0, 100, 90), confidence=0.5),
        ]
        result = assign_iou([gt], proposals, AssignerConfig(n_pos=2))
        assert result.positive_ids == [1, 2]
        assert result.ignored == [0]


class TestPerLevel:
    def test_single_level_matches_the_plain_search(self, flat_grid, rng):
        gts = [box_from_center(60, 60, 20, 50), box_from_center(140, 120, 20, 50)]
        proposals = []
        for k in range(12):
            x, y = rng.uniform(30, 170, size=2)
            proposals.append(proposal(k, float(x), float(y), 20, 50, float(rng.uniform())))
        assert all(assign_level(box_scale(p.box)) == 'C3' for p in proposals)

        cfg = ungated(n_pos=6, n_neg=4)
        plain = assign_depth_guided(gts, proposals, flat_grid, cfg).to_dict()
        leveled = assign_per_level(gts, proposals, flat_grid, cfg).to_dict()
        plain.pop('assigner')
        leveled.pop('assigner')
        assert plain == leveled

    def test_pairs_never_cross_levels(self, make_grid):
        grid = make_grid(np.full((200, 200), 10.0))
        gts = [BBox(10, 10, 40, 130), BBox(300, 100, 450, 700)]
        proposals = [
            RankedProposal(id=0, box=gts[0].shifted(dx=2), confidence=0.9),
            RankedProposal(id=1, box=gts[1].shifted(dx=5), confidence=0.8),
            RankedProposal(id=2, box=box_from_center(370, 400, 30, 120), confidence=0.7),
            RankedProposal(id=3, box=box_from_center(30, 75, 150, 600), confidence=0.6),
        ]
        result = assign_per_level(gts, proposals, grid, ungated(n_pos=8, n_neg=0))
        assert [result.gt_of(pid) for pid in range(4)] == [0, 1, 0, 1]
        boxes = {p.id: p.box for p in proposals}
        for match in result.positives:
            assert assign_level(box_scale(boxes[match.proposal_id])) == assign_level(box_scale(gts[match.gt_index]))

    def test_gt_without_same_level_proposals_stays_unmatched(self, flat_grid):
        gt = BBox(0, 0, 30, 120)
        proposals = [RankedProposal(id=0, box=box_from_center(15, 60, 35, 140), confidence=0.9)]
        result = assign_per_level([gt], proposals, flat_grid, AssignerConfig(n_neg=0))
        assert result.positives == []
        assert result.unmatched_gts == [0]


class TestFillNegatives:
    gts = [BBox(0, 0, 10, 10)]

    def far_proposals(self, ids):
        return [RankedProposal(id=k, box=BBox(100 + 20 * k, 0, 110 + 20 * k, 10), confidence=0.1) for k in ids]

    def test_samples_from_the_low_overlap_pool(self):
        proposals = self.far_proposals(range(10))
        cfg = AssignerConfig(n_pos=4, n_neg=4)
        result = fill_negatives(AssignmentResult(assigner='depth'), self.gts, proposals, cfg)
        assert len(result.negatives) == 4
        assert set(result.negatives) <= set(range(10))
        assert sorted(result.negatives + result.ignored) == list(range(10))
        again = fill_negatives(AssignmentResult(assigner='depth'), self.gts, proposals, cfg)
        assert again.negatives == result.negatives

    def test_half_comes_from_pending(self):
        proposals = self.far_proposals(range(12))
        partial = AssignmentResult(assigner='depth', pending=list(range(6)))
        result = fill_negatives(partial, self.gts, proposals, AssignerConfig(n_pos=4, n_neg=8))
        from_pending = [pid for pid in result.negatives if pid < 6]
        assert len(from_pending) == 4
        assert len(result.negatives) == 8
        assert sorted(result.pending) == sorted(set(range(6)) - set(from_pending))

    def test_pending_backfills_a_short_pool(self):
        proposals = self.far_proposals(range(7))
        partial = AssignmentResult(assigner='depth', pending=list(range(6)))
        result = fill_negatives(partial, self.gts, proposals, AssignerConfig(n_pos=4, n_neg=6))
        assert len(result.negatives) == 6
        assert 6 in result.negatives
        assert len(result.pending) == 1

    def test_no_candidates(self):
        proposals = [RankedProposal(id=0, box=BBox(0, 0, 10, 10), confidence=0.9)]
        result = fill_negatives(AssignmentResult(assigner='depth'), self.gts, proposals, AssignerConfig(n_neg=5))
        assert result.negatives == []
        assert result.ignored == [0]

    def test_positives_are_never_sampled(self):
        proposals = self.far_proposals(range(3))
        partial = AssignmentResult(assigner='depth', positives=[Match(0, 0, 1.0)], pending=[0, 1])
        result = fill_negatives(partial, self.gts, proposals, AssignerConfig(n_pos=4, n_neg=4))
        assert 0 not in result.negatives
        assert sorted(result.negatives) == [1, 2]


class TestInvariants:
    def random_instance(self, rng):
        grid = DepthGrid(rng.uniform(1.0, 30.0, size=(10, 10)))
        def box():
            x, y = rng.uniform(0, 28, size=2)
            w, h = rng.uniform(2, 12, size=2)
            return BBox(float(x), float(y), float(x + w), float(y + h))
        gts = [box() for _ in range(int(rng.integers(1, 4)))]
        proposals = [RankedProposal(id=k, box=box(), confidence=float(rng.uniform()))
                     for k in range(int(rng.integers(1, 9)))]
        cfg = AssignerConfig(
            n_pos=int(rng.integers(1, 7)),
            n_neg=int(rng.integers(0, 7)),
            max_cost=None if rng.uniform() < 0.5 else 20.0,
            candidate_iou_thr=None if rng.uniform() < 0.5 else 0.1,
            rng_seed=int(rng.integers(1000)),
        )
        return gts, proposals, grid, cfg

    @staticmethod
    def claimable(gt, p, gts, grid, cfg):
        if cfg.candidate_iou_thr is not None and iou_matrix(gts, [p.box]).max() < cfg.candidate_iou_thr:
            return False
        total = matching_cost(gt, p.box, grid, cfg.cost_weights).total
        return np.isfinite(total) and total <= cfg.cost_ceiling

    def test_random_instances_keep_every_invariant(self, rng):
        for _ in range(1000):
            gts, proposals, grid, cfg = self.random_instance(rng)
            for name in ('iou', 'depth', 'depth-per-level'):
                result = run_assigner(name, gts, proposals, grid, cfg)
                check_assignment_invariants(result, proposals, cfg)
                assert run_assigner(name, gts, proposals, grid, cfg).to_dict() == result.to_dict()

            result = run_assigner('depth', gts, proposals, grid, cfg)
            bound = max(1, cfg.n_pos // len(gts))
            assert all(count <= bound for count in result.positives_per_gt().values())
            if len(result.positives) < cfg.n_pos:
                positive_ids = set(result.positive_ids)
                for g in result.unmatched_gts:
                    assert all(p.id in positive_ids for p in proposals
                               if self.claimable(gts[g], p, gts, grid, cfg))

            levels = [assign_level(box_scale(b), cfg.level_ranges) for b in gts]
            leveled = run_assigner('depth-per-level', gts, proposals, grid, cfg)
            for g, count in leveled.positives_per_gt().items():
                assert count <= max(1, cfg.n_pos // levels.count(levels[g]))

    def test_overlapping_roles_are_reported(self):
        proposals = [RankedProposal(id=0, box=BBox(0, 0, 1, 1), confidence=0.5)]
        broken = AssignmentResult(assigner='depth', positives=[Match(0, 0, 1.0)], negatives=[0],
                                  capacity={0: 1})
        with pytest.raises(InternalError):
            check_assignment_invariants(broken, proposals, AssignerConfig())

    def test_over_capacity_is_reported(self):
        proposals = [RankedProposal(id=k, box=BBox(0, 0, 1, 1), confidence=0.5) for k in range(2)]
        broken = AssignmentResult(assigner='depth', positives=[Match(0, 0, 1.0), Match(1, 0, 2.0)],
                                  capacity={0: 1})
        with pytest.raises(InternalError):
            check_assignment_invariants(broken, proposals, AssignerConfig())
