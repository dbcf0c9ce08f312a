"""
Synthetic pedestrian scenes.

Pedestrians stand on a flat ground plane in front of a pinhole camera with a
horizontal optical axis. A pedestrian at lateral offset ``x`` and depth ``z``
with real height ``H`` projects to a box whose foot row is
``cy + f * camera_height / z`` and whose height is ``f * H / z``.
"""

import functools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from apps.core.exceptions import FixtureError, ValidationError
from .assignment import RankedProposal, assign_depth_guided, assign_iou
from .config import AssignerConfig, CameraParams, CostWeights, ProposalParams, SceneParams
from .depthfield import DepthGrid, sample_depth
from .evaluation import Annotation, inconsistency_rate
from .geometry import BBox, box_from_center, center, iou, iou_matrix

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class CameraModel:
    focal: float
    image_width: int
    image_height: int
    camera_height: float
    cx: Optional[float] = None
    cy: Optional[float] = None

    def __post_init__(self):
        for name in ('focal', 'image_width', 'image_height', 'camera_height'):
            if not getattr(self, name) > 0:
                raise ValidationError(f"Camera {name} must be positive",
                                      field_errors={name: [str(getattr(self, name))]})
        if self.cx is None:
            object.__setattr__(self, 'cx', self.image_width / 2.0)
        if self.cy is None:
            object.__setattr__(self, 'cy', self.image_height / 2.0)

    @classmethod
    def from_params(cls, params: CameraParams) -> 'CameraModel':
        return cls(**params.model_dump())

    def to_dict(self) -> dict:
        return {
            'focal': self.focal,
            'image_width': self.image_width,
            'image_height': self.image_height,
            'camera_height': self.camera_height,
            'cx': self.cx,
            'cy': self.cy,
        }


@dataclass(frozen=True)
class Pedestrian3D:
    x: float
    z: float
    height: float
    width: float
    visibility: float = 1.0

    def __post_init__(self):
        if not (self.z > 0 and self.height > 0 and self.width > 0):
            raise ValidationError("Pedestrian depth and size must be positive",
                                  field_errors={'pedestrian': [f'z={self.z} h={self.height} w={self.width}']})

    def to_dict(self) -> dict:
        return {'x': self.x, 'z': self.z, 'height': self.height,
                'width': self.width, 'visibility': self.visibility}


@dataclass(frozen=True)
class Scene:
    camera: CameraModel
    pedestrians: Tuple[Pedestrian3D, ...]
    gt_boxes: Tuple[BBox, ...]
    depth: DepthGrid
    proposals: Tuple[RankedProposal, ...]
    seed: Optional[int] = None

    @property
    def visibilities(self) -> Tuple[float, ...]:
        return tuple(p.visibility for p in self.pedestrians)

    def annotations(self, image_id: str) -> List[Annotation]:
        return [Annotation(box=b, visibility=p.visibility, image_id=image_id)
                for b, p in zip(self.gt_boxes, self.pedestrians)]


def project_pedestrian(camera: CameraModel, ped: Pedestrian3D) -> BBox:
    foot = camera.cy + camera.focal * camera.camera_height / ped.z
    height = camera.focal * ped.height / ped.z
    half_width = camera.focal * ped.width / ped.z / 2.0
    u = camera.cx + camera.focal * ped.x / ped.z
    return BBox(u - half_width, foot - height, u + half_width, foot)


def occlusion_visibility(target: BBox, occluders: Sequence[BBox]) -> float:
    """Fraction of ``target`` not covered by the union of ``occluders``."""
    if target.area <= 0:
        return 0.0
    clipped = []
    for b in occluders:
        x1, y1 = max(b.x1, target.x1), max(b.y1, target.y1)
        x2, y2 = min(b.x2, target.x2), min(b.y2, target.y2)
        if x2 > x1 and y2 > y1:
            clipped.append((x1, y1, x2, y2))
    if not clipped:
        return 1.0

    rects = np.array(clipped)
    xs = np.unique(np.concatenate([[target.x1, target.x2], rects[:, 0], rects[:, 2]]))
    ys = np.unique(np.concatenate([[target.y1, target.y2], rects[:, 1], rects[:, 3]]))
    mx = (xs[:-1] + xs[1:]) / 2.0
    my = (ys[:-1] + ys[1:]) / 2.0
    covered = np.zeros((my.size, mx.size), dtype=bool)
    for x1, y1, x2, y2 in rects:
        covered |= ((my >= y1) & (my <= y2))[:, None] & ((mx >= x1) & (mx <= x2))[None, :]
    cell_area = np.outer(np.diff(ys), np.diff(xs))
    return float(1.0 - cell_area[covered].sum() / target.area)


def _visibilities(pedestrians: Sequence[Pedestrian3D], boxes: Sequence[BBox]) -> List[float]:
    return [
        occlusion_visibility(box, [other for q, other in zip(pedestrians, boxes) if q.z < ped.z])
        for ped, box in zip(pedestrians, boxes)
    ]


def grid_shape(camera: CameraModel, stride: float) -> Tuple[int, int]:
    return math.ceil(camera.image_height / stride), math.ceil(camera.image_width / stride)


def render_depth_map(camera: CameraModel, pedestrians: Sequence[Pedestrian3D], stride: float = 4.0,
                     background_depth: float = 80.0, depth_mode: str = 'constant') -> DepthGrid:
    """
    Depth per cell centre: the nearest pedestrian whose box covers it, else background.

    ``ground-plane`` mode fills background cells below the horizon with the
    ground depth ``f * camera_height / (v - cy)``, capped at ``background_depth``.
    """
    if stride < 1:
        raise ValidationError(f"Stride must be at least 1 pixel, got {stride}",
                              field_errors={'stride': [str(stride)]})
    rows, cols = grid_shape(camera, stride)
    xc = (np.arange(cols) + 0.5) * stride
    yc = (np.arange(rows) + 0.5) * stride

    values = np.full((rows, cols), float(background_depth))
    if depth_mode == 'ground-plane':
        ground = np.full(rows, float(background_depth))
        below = yc > camera.cy
        ground[below] = np.minimum(camera.focal * camera.camera_height / (yc[below] - camera.cy),
                                   background_depth)
        values[:] = ground[:, None]
    elif depth_mode != 'constant':
        raise ValidationError(f"Unknown depth mode '{depth_mode}'",
                              field_errors={'depth_mode': [depth_mode]})

    # far to near so nearer pedestrians overwrite
    for ped in sorted(pedestrians, key=lambda p: -p.z):
        box = project_pedestrian(camera, ped)
        row_mask = (yc >= box.y1) & (yc <= box.y2)
        col_mask = (xc >= box.x1) & (xc <= box.x2)
        values[np.ix_(row_mask, col_mask)] = ped.z

    return DepthGrid(values, stride=stride)


def _clip_to_image(box: BBox, width: float, height: float) -> BBox:
    return BBox(max(box.x1, 0.0), max(box.y1, 0.0), min(box.x2, width), min(box.y2, height))


def generate_proposals(gt_boxes: Sequence[BBox], camera: CameraModel, params: ProposalParams,
                       seed: int) -> List[RankedProposal]:
    """
    ``per_gt`` jittered copies of every GT followed by ``random`` uniform boxes.
    Confidence is the best IoU with any GT plus Gaussian noise, clamped to [0, 1].
    ``jitter == 0`` switches off all geometric perturbation.
    """
    rng = np.random.default_rng(seed)
    width, height = float(camera.image_width), float(camera.image_height)
    boxes: List[BBox] = []

    for gt in gt_boxes:
        c = center(gt)
        for _ in range(params.per_gt):
            if params.jitter == 0:
                boxes.append(gt)
                continue
            dx, dy = rng.normal(0.0, params.jitter, size=2) * (gt.width, gt.height)
            sw, sh = np.exp(rng.normal(0.0, params.size_jitter, size=2))
            cx = float(np.clip(c.x + dx, 0.0, width))
            cy = float(np.clip(c.y + dy, 0.0, height))
            jittered = box_from_center(cx, cy, gt.width * float(sw), gt.height * float(sh))
            boxes.append(_clip_to_image(jittered, width, height))

    for _ in range(params.random):
        h = float(rng.uniform(16.0, max(16.0, height / 2.0)))
        w = min(0.41 * h, width)
        cx = float(rng.uniform(w / 2.0, width - w / 2.0))
        cy = float(rng.uniform(h / 2.0, height - h / 2.0))
        boxes.append(_clip_to_image(box_from_center(cx, cy, w, h), width, height))

    if not boxes:
        return []
    best = iou_matrix(gt_boxes, boxes).max(axis=0) if gt_boxes else np.zeros(len(boxes))
    noise = rng.normal(0.0, params.confidence_noise, size=len(boxes)) if params.confidence_noise else 0.0
    confidence = np.clip(best + noise, 0.0, 1.0)
    return [RankedProposal(id=i, box=b, confidence=float(s)) for i, (b, s) in enumerate(zip(boxes, confidence))]


def _check_frustum(params: SceneParams, camera: CameraModel) -> None:
    f = camera.focal
    foot = camera.cy + f * camera.camera_height / params.z_min
    top = foot - f * params.height_max / params.z_min
    widest = f * params.aspect * params.height_max / params.z_min
    problems = []
    if foot > camera.image_height:
        problems.append(f'feet at z_min fall below the image (row {foot:.1f})')
    if top < 0:
        problems.append(f'heads at z_min rise above the image (row {top:.1f})')
    if widest > camera.image_width:
        problems.append('pedestrians at z_min are wider than the image')
    if problems:
        raise ValidationError("Scene ranges do not fit the camera frustum",
                              field_errors={'scene': problems})


def generate_scene(params: SceneParams = SceneParams(), seed: int = 0,
                   proposal_params: ProposalParams = ProposalParams()) -> Scene:
    camera = CameraModel.from_params(params.camera)
    _check_frustum(params, camera)
    rng = np.random.default_rng(seed)

    count = int(rng.integers(params.min_pedestrians, params.max_pedestrians + 1))
    placed = []
    for _ in range(count):
        height = float(np.clip(rng.normal(params.height_mean, params.height_std),
                               params.height_min, params.height_max))
        z = float(rng.uniform(params.z_min, params.z_max))
        box_width = camera.focal * params.aspect * height / z
        u = float(rng.uniform(box_width / 2.0, camera.image_width - box_width / 2.0))
        placed.append(Pedestrian3D(x=(u - camera.cx) * z / camera.focal, z=z,
                                   height=height, width=params.aspect * height))

    boxes = [project_pedestrian(camera, p) for p in placed]
    pedestrians = tuple(
        Pedestrian3D(x=p.x, z=p.z, height=p.height, width=p.width, visibility=v)
        for p, v in zip(placed, _visibilities(placed, boxes))
    )
    depth = render_depth_map(camera, pedestrians, params.stride, params.background_depth, params.depth_mode)
    proposals = generate_proposals(boxes, camera, proposal_params, seed)

    logger.debug("Scene generated", seed=seed, pedestrians=count, proposals=len(proposals))
    return Scene(camera=camera, pedestrians=pedestrians, gt_boxes=tuple(boxes), depth=depth,
                 proposals=tuple(proposals), seed=seed)


def has_depth_separated_overlap(scene: Scene, min_gap: float) -> bool:
    """True when two pedestrians with overlapping boxes stand at least ``min_gap`` apart in depth."""
    peds, boxes = scene.pedestrians, scene.gt_boxes
    for i in range(len(peds)):
        for j in range(i + 1, len(peds)):
            if abs(peds[i].z - peds[j].z) >= min_gap and iou(boxes[i], boxes[j]) > 0:
                return True
    return False


def figure1_assigner_config(normalize: bool = False) -> AssignerConfig:
    """
    Capacity two per GT; the depth term outweighs pixel distance. P3 and P4 sit
    below any IoU gate, so every proposal enters the search.
    """
    return AssignerConfig(n_pos=4, n_neg=4, candidate_iou_thr=None,
                          cost_weights=CostWeights(lambda_d=0.1, lambda_z=1.0, normalize=normalize))


FIGURE1_CAMERA = CameraModel(focal=1000.0, image_width=640, image_height=480, camera_height=1.5)
FIGURE1_SIMILARITY = 0.4


def _figure1_fail(message: str) -> None:
    raise FixtureError(f"Figure-1 fixture: {message}")


@functools.lru_cache(maxsize=None)
def figure1_scenario() -> Scene:
    """
    Two horizontally adjacent pedestrians: G1 (index 0) far at 15 m, G2 (index 1)
    near at 10 m occluding G1's right side. P1 overlaps G1 most but its centre
    sits on G2's depth plateau; P2 overlaps G2; P3 and P4 are small boxes on G1.
    """
    camera = FIGURE1_CAMERA
    placed = [
        Pedestrian3D(x=-0.30, z=15.0, height=1.8, width=0.41 * 1.8),
        Pedestrian3D(x=0.23, z=10.0, height=1.8, width=0.41 * 1.8),
    ]
    g1, g2 = [project_pedestrian(camera, p) for p in placed]
    pedestrians = tuple(
        Pedestrian3D(x=p.x, z=p.z, height=p.height, width=p.width, visibility=v)
        for p, v in zip(placed, _visibilities(placed, [g1, g2]))
    )
    depth = render_depth_map(camera, pedestrians, stride=4.0, background_depth=80.0)

    g1_center = center(g1)
    p1 = g1.shifted(dx=10.0)
    p2 = BBox(298.0, 215.0, 360.0, 355.0)
    p3 = box_from_center(g1_center.x, g1_center.y, g1.width / 2.0, g1.height / 2.0)
    p4 = p3.shifted(dy=-13.0)
    proposals = (
        RankedProposal(id=0, box=p1, confidence=0.9),
        RankedProposal(id=1, box=p2, confidence=0.85),
        RankedProposal(id=2, box=p3, confidence=0.6),
        RankedProposal(id=3, box=p4, confidence=0.55),
    )
    scene = Scene(camera=camera, pedestrians=pedestrians, gt_boxes=(g1, g2), depth=depth,
                  proposals=proposals, seed=None)

    if not iou(p1, g1) > iou(p1, g2):
        _figure1_fail('P1 must overlap G1 more than G2')
    if not (iou(p1, g1) >= 0.5 and iou(p2, g2) >= 0.5 and iou(p2, g1) < 0.5):
        _figure1_fail('P1 and P2 must be IoU positives of different GTs')
    if sample_depth(depth, center(p1)) != placed[1].z:
        _figure1_fail("P1's centre must read G2's depth")
    if not iou(p1, p2) >= FIGURE1_SIMILARITY:
        _figure1_fail('P1 and P2 must count as similar proposals')

    baseline = assign_iou(scene.gt_boxes, proposals, figure1_assigner_config())
    if (baseline.gt_of(0), baseline.gt_of(1)) != (0, 1):
        _figure1_fail('IoU baseline must split P1 and P2')
    for normalize in (False, True):
        cfg = figure1_assigner_config(normalize)
        guided = assign_depth_guided(scene.gt_boxes, proposals, depth, cfg)
        if (guided.gt_of(0), guided.gt_of(1)) != (1, 1):
            _figure1_fail(f'depth-guided assignment must unite P1 and P2 on G2 (normalize={normalize})')
        if inconsistency_rate(guided, proposals, FIGURE1_SIMILARITY) != 0.0:
            _figure1_fail('depth-guided assignment must be consistent')

    return scene
