"""
Run configuration models.

A run is described by one JSON document validated into ``ExperimentConfig``.
Every model is frozen and rejects unknown keys; omitted keys take defaults.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from apps.core.exceptions import ConfigurationError, field_errors_from_pydantic
from apps.core.utils import deep_merge_dicts
from .geometry import LevelRanges

AssignerName = Literal['iou', 'depth', 'depth-per-level']
DepthMode = Literal['constant', 'ground-plane']

DEFAULT_SIMILARITY_THRESHOLD = 0.4


class StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class CostWeights(StrictModel):
    """
    Weights of the matching cost ``lambda_d * D + lambda_z * Z``.

    ``normalize`` divides D by the image diagonal and Z by the grid depth range,
    making both terms unitless.
    """

    lambda_d: float = Field(1.0, ge=0, allow_inf_nan=False)
    lambda_z: float = Field(1.0, ge=0, allow_inf_nan=False)
    normalize: bool = False

    @model_validator(mode='after')
    def _not_both_zero(self) -> 'CostWeights':
        if self.lambda_d == 0 and self.lambda_z == 0:
            raise ValueError('lambda_d and lambda_z cannot both be zero')
        return self


class AssignerConfig(StrictModel):
    n_pos: int = Field(256, ge=1)
    n_neg: int = Field(256, ge=0)
    cost_weights: CostWeights = CostWeights()
    # None leaves the cost ceiling unbounded
    max_cost: Optional[float] = Field(None, ge=0, allow_inf_nan=False)
    iou_pos_thr: float = Field(0.5, ge=0, le=1)
    iou_neg_thr: float = Field(0.3, ge=0, le=1)
    # Best IoU with any GT a proposal needs to enter the depth-guided search; None admits all
    candidate_iou_thr: Optional[float] = Field(0.5, ge=0, le=1)
    level_uppers: Tuple[float, ...] = (64.0, 128.0, 256.0, 512.0)
    rng_seed: int = 0

    @model_validator(mode='after')
    def _check_thresholds(self) -> 'AssignerConfig':
        if self.iou_neg_thr > self.iou_pos_thr:
            raise ValueError('iou_neg_thr must not exceed iou_pos_thr')
        uppers = self.level_uppers
        if any(u <= 0 or not math.isfinite(u) for u in uppers):
            raise ValueError('level_uppers must be finite and positive')
        if any(b <= a for a, b in zip(uppers, uppers[1:])):
            raise ValueError('level_uppers must be strictly increasing')
        return self

    @property
    def level_ranges(self) -> LevelRanges:
        return LevelRanges.from_uppers(self.level_uppers)

    @property
    def cost_ceiling(self) -> float:
        return math.inf if self.max_cost is None else self.max_cost


class LossConfig(StrictModel):
    alpha: float = Field(1.0, ge=0, allow_inf_nan=False)
    beta: float = Field(1.0, ge=0, allow_inf_nan=False)
    gamma: float = Field(0.01, ge=0, allow_inf_nan=False)
    # None derives kappa from the depth grid (1 / diagonal in cells)
    kappa: Optional[float] = Field(None, gt=0, allow_inf_nan=False)
    smooth_l1_beta: float = Field(1.0, gt=0)
    eps: float = Field(1e-12, gt=0, lt=0.5)


class CameraParams(StrictModel):
    focal: float = Field(800.0, gt=0)
    image_width: int = Field(1024, gt=0)
    image_height: int = Field(512, gt=0)
    camera_height: float = Field(1.2, gt=0)
    cx: Optional[float] = None
    cy: Optional[float] = None


class SceneParams(StrictModel):
    camera: CameraParams = CameraParams()
    min_pedestrians: int = Field(2, ge=1)
    max_pedestrians: int = Field(5, ge=1)
    z_min: float = Field(8.0, gt=0)
    z_max: float = Field(60.0, gt=0)
    height_mean: float = Field(1.7, gt=0)
    height_std: float = Field(0.1, ge=0)
    height_min: float = Field(1.4, gt=0)
    height_max: float = Field(2.0, gt=0)
    aspect: float = Field(0.41, gt=0)
    stride: float = Field(4.0, gt=0)
    background_depth: float = Field(80.0, gt=0)
    depth_mode: DepthMode = 'constant'

    @model_validator(mode='after')
    def _check_ranges(self) -> 'SceneParams':
        if self.min_pedestrians > self.max_pedestrians:
            raise ValueError('min_pedestrians must not exceed max_pedestrians')
        if self.z_min >= self.z_max:
            raise ValueError('z_min must be below z_max')
        if self.height_min > self.height_max:
            raise ValueError('height_min must not exceed height_max')
        if self.background_depth <= self.z_max:
            raise ValueError('background_depth must lie behind every pedestrian (above z_max)')
        return self


class ProposalParams(StrictModel):
    per_gt: int = Field(8, ge=0)
    random: int = Field(10, ge=0)
    jitter: float = Field(0.1, ge=0)
    size_jitter: float = Field(0.1, ge=0)
    confidence_noise: float = Field(0.05, ge=0)


class ExperimentConfig(StrictModel):
    scene_count: int = Field(100, ge=1)
    base_seed: int = 0
    scene: SceneParams = SceneParams()
    proposals: ProposalParams = ProposalParams()
    assigner: AssignerConfig = AssignerConfig()
    loss: LossConfig = LossConfig()
    assigners: Tuple[AssignerName, ...] = ('iou', 'depth')
    similarity_thr: float = Field(DEFAULT_SIMILARITY_THRESHOLD, ge=0, le=1)
    histogram_bins: int = Field(20, ge=1)
    # Keep only scenes with two overlapping pedestrians at least this far apart in depth
    min_depth_gap: Optional[float] = Field(None, gt=0)

    @model_validator(mode='after')
    def _check_assigners(self) -> 'ExperimentConfig':
        if not self.assigners:
            raise ValueError('at least one assigner is required')
        if len(set(self.assigners)) != len(self.assigners):
            raise ValueError('assigners must not repeat')
        return self

    def with_overrides(self, seed: Optional[int] = None, normalize: Optional[bool] = None,
                       scene_count: Optional[int] = None) -> 'ExperimentConfig':
        """Copy with command-line overrides applied; the result is re-validated."""
        overrides: Dict[str, Any] = {}
        if seed is not None:
            overrides = deep_merge_dicts(overrides, {'base_seed': seed, 'assigner': {'rng_seed': seed}})
        if normalize is not None:
            overrides = deep_merge_dicts(overrides, {'assigner': {'cost_weights': {'normalize': normalize}}})
        if scene_count is not None:
            overrides['scene_count'] = scene_count
        return parse_experiment_config(deep_merge_dicts(self.model_dump(), overrides))


def parse_experiment_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except PydanticValidationError as exc:
        raise ConfigurationError(
            detail='Configuration failed validation',
            field_errors=field_errors_from_pydantic(exc),
        )


def load_experiment_config(path: Union[str, Path, None]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        raw = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigurationError(f"Cannot read configuration {path}: {exc.strerror or exc}")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Configuration {path} is not valid JSON: {exc.msg} (line {exc.lineno})")
    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration {path} must be a JSON object")
    return parse_experiment_config(data)
