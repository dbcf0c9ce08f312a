import numpy as np
import pytest

from apps.assign.config import ProposalParams, SceneParams
from apps.assign.depthfield import sample_depth
from apps.assign.geometry import BBox, Point2, center, iou
from apps.assign.scenesim import (
    FIGURE1_CAMERA, CameraModel, Pedestrian3D, generate_proposals, generate_scene, grid_shape,
    has_depth_separated_overlap, occlusion_visibility, project_pedestrian, render_depth_map,
)
from apps.core.exceptions import ValidationError

CAMERA = CameraModel(focal=1000.0, image_width=640, image_height=480, camera_height=1.5)


class TestProjection:
    def test_box_height_follows_depth(self):
        near = project_pedestrian(CAMERA, Pedestrian3D(x=0.0, z=5.0, height=1.7, width=0.7))
        far = project_pedestrian(CAMERA, Pedestrian3D(x=0.0, z=50.0, height=1.7, width=0.7))
        assert near.height == pytest.approx(340.0)
        assert far.height == pytest.approx(34.0)

    def test_feet_stand_on_the_ground_plane(self):
        box = project_pedestrian(CAMERA, Pedestrian3D(x=0.0, z=10.0, height=1.8, width=0.74))
        assert box.y2 == pytest.approx(240.0 + 1000.0 * 1.5 / 10.0)
        assert center(box).x == pytest.approx(320.0)

    def test_nearer_pedestrian_appears_larger(self):
        boxes = [project_pedestrian(CAMERA, Pedestrian3D(x=0.5, z=z, height=1.7, width=0.7)) for z in (8, 16, 32)]
        assert boxes[0].height > boxes[1].height > boxes[2].height

    def test_principal_point_defaults_to_the_image_centre(self):
        assert (CAMERA.cx, CAMERA.cy) == (320.0, 240.0)

    def test_camera_rejects_non_positive_focal(self):
        with pytest.raises(ValidationError):
            CameraModel(focal=0.0, image_width=640, image_height=480, camera_height=1.5)


class TestOcclusion:
    def test_half_covered(self):
        assert occlusion_visibility(BBox(0, 0, 10, 10), [BBox(5, 0, 15, 10)]) == pytest.approx(0.5)

    def test_overlapping_occluders_count_once(self):
        target = BBox(0, 0, 10, 10)
        assert occlusion_visibility(target, [BBox(0, 0, 5, 10), BBox(3, 0, 8, 10)]) == pytest.approx(0.2)

    def test_unoccluded(self):
        assert occlusion_visibility(BBox(0, 0, 10, 10), [BBox(20, 0, 30, 10)]) == 1.0


class TestDepthRendering:
    def test_empty_scene_is_background(self):
        grid = render_depth_map(CAMERA, [], stride=4.0, background_depth=80.0)
        assert grid.values.shape == grid_shape(CAMERA, 4.0) == (120, 160)
        assert np.all(grid.values == 80.0)

    def test_pedestrian_region_reads_its_depth(self):
        ped = Pedestrian3D(x=0.0, z=12.0, height=1.7, width=0.7)
        grid = render_depth_map(CAMERA, [ped])
        assert sample_depth(grid, center(project_pedestrian(CAMERA, ped))) == 12.0
        assert sample_depth(grid, Point2(5.0, 5.0)) == 80.0

    def test_nearest_pedestrian_wins_overlaps(self):
        far = Pedestrian3D(x=0.0, z=20.0, height=1.7, width=0.7)
        near = Pedestrian3D(x=0.1, z=8.0, height=1.7, width=0.7)
        for order in ([far, near], [near, far]):
            grid = render_depth_map(CAMERA, order)
            assert sample_depth(grid, center(project_pedestrian(CAMERA, far))) == 8.0

    def test_ground_plane_mode(self):
        grid = render_depth_map(CAMERA, [], depth_mode='ground-plane')
        assert grid.values[0, 0] == 80.0
        assert grid.values[-1, 0] == pytest.approx(1000.0 * 1.5 / (478.0 - 240.0))
        assert np.all(np.diff(grid.values[60:, 0]) <= 0)

    def test_rejects_sub_pixel_stride(self):
        with pytest.raises(ValidationError):
            render_depth_map(CAMERA, [], stride=0.5)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValidationError):
            render_depth_map(CAMERA, [], depth_mode='lidar')


class TestProposals:
    gts = [BBox(100, 100, 140, 200), BBox(300, 150, 330, 225), BBox(500, 50, 560, 200)]

    def test_counts_and_ids(self):
        proposals = generate_proposals(self.gts, CAMERA, ProposalParams(per_gt=5, random=10), seed=3)
        assert len(proposals) == 25
        assert [p.id for p in proposals] == list(range(25))

    def test_zero_jitter_copies_ground_truth(self):
        params = ProposalParams(per_gt=2, random=0, jitter=0.0, confidence_noise=0.0)
        proposals = generate_proposals(self.gts, CAMERA, params, seed=0)
        assert [p.box for p in proposals] == [g for g in self.gts for _ in range(2)]
        assert all(p.confidence == 1.0 for p in proposals)

    def test_random_boxes_without_ground_truth_have_no_confidence(self):
        params = ProposalParams(per_gt=0, random=20, confidence_noise=0.0)
        proposals = generate_proposals([], CAMERA, params, seed=5)
        assert len(proposals) == 20
        assert all(p.confidence == 0.0 for p in proposals)
        for p in proposals:
            assert 0.0 <= p.box.x1 < p.box.x2 <= 640.0
            assert 0.0 <= p.box.y1 < p.box.y2 <= 480.0

    def test_jittered_boxes_stay_near_their_ground_truth(self):
        proposals = generate_proposals(self.gts, CAMERA, ProposalParams(per_gt=8, random=0), seed=11)
        for k, p in enumerate(proposals):
            assert iou(p.box, self.gts[k // 8]) > 0.2

    def test_seeded(self):
        a = generate_proposals(self.gts, CAMERA, ProposalParams(), seed=42)
        b = generate_proposals(self.gts, CAMERA, ProposalParams(), seed=42)
        assert a == b


class TestScenes:
    def test_same_seed_same_scene(self):
        a, b = generate_scene(seed=9), generate_scene(seed=9)
        assert a.gt_boxes == b.gt_boxes
        assert a.proposals == b.proposals
        assert a.depth == b.depth

    def test_pedestrian_count_and_bounds(self):
        params = SceneParams()
        for seed in range(20):
            scene = generate_scene(params, seed)
            assert params.min_pedestrians <= len(scene.pedestrians) <= params.max_pedestrians
            for box in scene.gt_boxes:
                assert 0.0 <= box.x1 and box.x2 <= scene.camera.image_width
                assert 0.0 <= box.y1 and box.y2 <= scene.camera.image_height

    def test_depth_map_agrees_with_frontmost_pedestrian(self):
        for seed in range(20):
            scene = generate_scene(seed=seed)
            stride = scene.depth.stride
            for ped, box in zip(scene.pedestrians, scene.gt_boxes):
                row, col = scene.depth.cell_of(*center(box))
                cx, cy = (col + 0.5) * stride, (row + 0.5) * stride
                covered_by_nearer = any(
                    other.z < ped.z and other_box.x1 <= cx <= other_box.x2 and other_box.y1 <= cy <= other_box.y2
                    for other, other_box in zip(scene.pedestrians, scene.gt_boxes)
                )
                if not covered_by_nearer:
                    assert scene.depth.values[row, col] == ped.z

    def test_visibility_reflects_nearer_pedestrians(self):
        for seed in range(10):
            scene = generate_scene(seed=seed)
            nearest = min(range(len(scene.pedestrians)), key=lambda k: scene.pedestrians[k].z)
            assert scene.visibilities[nearest] == 1.0
            assert all(0.0 <= v <= 1.0 for v in scene.visibilities)

    def test_frustum_check(self):
        with pytest.raises(ValidationError):
            generate_scene(SceneParams(z_min=0.5, z_max=10.0))

    def test_annotations_carry_visibility(self):
        scene = generate_scene(seed=1)
        anns = scene.annotations('scene_0001')
        assert [a.visibility for a in anns] == list(scene.visibilities)
        assert {a.image_id for a in anns} == {'scene_0001'}


class TestFigure1Fixture:
    def test_layout(self, figure1):
        g1, g2 = figure1.gt_boxes
        assert figure1.camera == FIGURE1_CAMERA
        assert [p.z for p in figure1.pedestrians] == [15.0, 10.0]
        assert g1.x2 > g2.x1
        assert [p.id for p in figure1.proposals] == [0, 1, 2, 3]

    def test_far_pedestrian_is_partly_hidden(self, figure1):
        far, near = figure1.visibilities
        assert near == 1.0
        assert 0.0 < far < 1.0

    def test_depth_separated_overlap(self, figure1):
        assert has_depth_separated_overlap(figure1, 5.0)
        assert not has_depth_separated_overlap(figure1, 10.0)

    def test_first_proposal_sits_on_the_near_plateau(self, figure1):
        p1 = figure1.proposals[0].box
        g1, g2 = figure1.gt_boxes
        assert iou(p1, g1) > iou(p1, g2)
        assert sample_depth(figure1.depth, center(p1)) == 10.0
