from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from django.conf import settings

from apps.core.exceptions import (
    BaseAssignError, DataError, ExceptionContext, ValidationError, describe,
)
from apps.core.utils import PerformanceTimer, chunk_list, measure_time
from .assignment import check_assignment_invariants, run_assigner
from .config import ExperimentConfig, load_experiment_config, parse_experiment_config
from .depthfield import matching_cost
from .evaluation import SUBSETS, evaluate_subset, evaluate_suite, get_subset, inconsistency_rate
from .geometry import iou_matrix
from .scenesim import (
    Scene, figure1_assigner_config, figure1_scenario, generate_scene, has_depth_separated_overlap,
)
from .serializers import (
    assignment_report_rows, read_annotations, read_cost_records, read_detections, read_scene, read_text,
    write_assignment_report, write_curve, write_frame, write_json, write_rescored_detections, write_scene,
)
from .supervision import rescore_detections

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

ROW_COLUMNS = [
    'scene_id', 'seed', 'assigner', 'status', 'inconsistency_rate', 'positives',
    'mean_total_cost', 'mean_abs_delta_cost', 'error',
]
SUMMARY_COLUMNS = [
    'assigner', 'scenes_ok', 'scenes_failed', 'mean_inconsistency', 'median_inconsistency',
    'mean_positives', 'mean_total_cost', 'median_total_cost', 'mean_abs_delta_cost',
    'not_worse_than_iou',
]
HISTOGRAM_COLUMNS = ['assigner', 'bin_left', 'bin_right', 'count']

# Seeds tried per scene slot before giving up on the depth-gap filter
MAX_SCENE_ATTEMPTS = 1000


def default_experiment_config() -> ExperimentConfig:
    defaults = settings.DEPTHASSIGN
    return parse_experiment_config({
        'scene': {
            'stride': defaults['GRID_STRIDE'],
            'background_depth': defaults['BACKGROUND_DEPTH'],
        },
        'similarity_thr': defaults['SIMILARITY_THRESHOLD'],
        'histogram_bins': settings.COMPARE_SETTINGS['HISTOGRAM_BINS'],
    })


def resolve_config(path: Optional[PathLike] = None, seed: Optional[int] = None,
                   normalize: bool = False) -> ExperimentConfig:
    cfg = load_experiment_config(path) if path is not None else default_experiment_config()
    if seed is not None or normalize:
        cfg = cfg.with_overrides(seed=seed, normalize=True if normalize else None)
    return cfg


def ensure_directory(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"Cannot create output directory {path}: {exc.strerror or exc}")
    return path


def scene_for_index(cfg: ExperimentConfig, index: int) -> Scene:
    """
    Scene for slot ``index``, seeded ``base_seed + index``. With ``min_depth_gap``
    set, seeds advance by ``scene_count`` until a scene shows a depth-separated overlap.
    """
    seed = cfg.base_seed + index
    for _ in range(MAX_SCENE_ATTEMPTS):
        scene = generate_scene(cfg.scene, seed, cfg.proposals)
        if cfg.min_depth_gap is None or has_depth_separated_overlap(scene, cfg.min_depth_gap):
            return scene
        seed += cfg.scene_count
    raise DataError(
        f"No scene with a {cfg.min_depth_gap} m depth-separated overlap after {MAX_SCENE_ATTEMPTS} seeds",
        extra_data={'scene_index': index},
    )


@dataclass
class SimulationSummary:
    out_dir: str
    scene_files: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {'out_dir': self.out_dir, 'scenes': len(self.scene_files), 'files': self.scene_files}


class SimulationService:
    """
    Writes ``scene_NNNN.json`` with its ``scene_NNNN.depth`` grid for every scene slot
    """

    @measure_time
    def run(self, cfg: ExperimentConfig, out_dir: PathLike) -> SimulationSummary:
        directory = ensure_directory(out_dir)
        summary = SimulationSummary(out_dir=str(directory))
        for index in range(cfg.scene_count):
            with ExceptionContext('simulate', scene_index=index):
                scene = scene_for_index(cfg, index)
                scene_path, _ = write_scene(scene, directory, f"scene_{index:04d}")
            summary.scene_files.append(scene_path.name)
        logger.info("Scenes written", count=len(summary.scene_files), out_dir=str(directory))
        return summary


class AssignmentService:
    """
    Runs each configured assigner on one scene and writes a per-proposal report
    """

    def run(self, cfg: ExperimentConfig, out_dir: PathLike,
            scene_path: Optional[PathLike] = None) -> Dict[str, Any]:
        directory = ensure_directory(out_dir)
        scene = read_scene(scene_path) if scene_path is not None else scene_for_index(cfg, 0)
        weights = cfg.assigner.cost_weights

        outcome: Dict[str, Any] = {}
        for name in cfg.assigners:
            with ExceptionContext('assign', assigner=name):
                result = run_assigner(name, scene.gt_boxes, scene.proposals, scene.depth, cfg.assigner)
                check_assignment_invariants(result, scene.proposals, cfg.assigner)
                rows = assignment_report_rows(result, scene.gt_boxes, scene.proposals, scene.depth, weights)
            report = directory / f"assignment_{name}.csv"
            write_assignment_report(rows, report)
            outcome[name] = {
                'report': report.name,
                'positives': len(result.positives),
                'negatives': len(result.negatives),
                'pending': len(result.pending),
                'unmatched_gts': result.unmatched_gts,
                'inconsistency_rate': inconsistency_rate(result, scene.proposals, cfg.similarity_thr),
            }
        return outcome


def _mean_or_none(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


def compare_scene(cfg: ExperimentConfig, scene_index: int, figure1: bool = False) -> Dict[str, Any]:
    """
    Rows for one scene, one per listed assigner, plus the positive costs per assigner.

    An assigner that raises yields a ``failed`` row; the remaining assigners still run.
    """
    if figure1:
        scene = figure1_scenario()
        assigner_cfg = figure1_assigner_config(cfg.assigner.cost_weights.normalize)
    else:
        assigner_cfg = cfg.assigner
        try:
            scene = scene_for_index(cfg, scene_index)
        except BaseAssignError as exc:
            rows = [{'scene_id': scene_index, 'seed': None, 'assigner': name,
                     'status': 'failed', 'error': describe(exc)} for name in cfg.assigners]
            return {'rows': rows, 'costs': {name: [] for name in cfg.assigners}}

    gts, proposals, grid = scene.gt_boxes, scene.proposals, scene.depth
    weights = assigner_cfg.cost_weights
    boxes = {p.id: p.box for p in proposals}
    # the GT an IoU-supervised regressor would target
    iou_target = iou_matrix(gts, [p.box for p in proposals]).argmax(axis=0)
    iou_target_of = {p.id: int(iou_target[k]) for k, p in enumerate(proposals)}

    rows, costs = [], {}
    for name in cfg.assigners:
        row = {'scene_id': scene_index, 'seed': scene.seed, 'assigner': name}
        try:
            with PerformanceTimer('compare_assigner', scene_id=scene_index, assigner=name), \
                    ExceptionContext('compare', scene_id=scene_index, assigner=name):
                result = run_assigner(name, gts, proposals, grid, assigner_cfg)
                check_assignment_invariants(result, proposals, assigner_cfg)
                totals, deltas = [], []
                for match in result.positives:
                    own = matching_cost(gts[match.gt_index], boxes[match.proposal_id], grid, weights).total
                    reference = matching_cost(gts[iou_target_of[match.proposal_id]],
                                              boxes[match.proposal_id], grid, weights).total
                    totals.append(own)
                    deltas.append(abs(own - reference))
                row.update({
                    'status': 'ok',
                    'inconsistency_rate': inconsistency_rate(result, proposals, cfg.similarity_thr),
                    'positives': len(result.positives),
                    'mean_total_cost': _mean_or_none(totals),
                    'mean_abs_delta_cost': _mean_or_none(deltas),
                    'error': '',
                })
                costs[name] = totals
        except Exception as exc:
            if not isinstance(exc, BaseAssignError):
                logger.error("Assigner crashed", scene_id=scene_index, assigner=name,
                             exception_type=exc.__class__.__name__, exception=str(exc))
            row.update({'status': 'failed', 'error': describe(exc)})
            costs[name] = []
        rows.append(row)
    return {'rows': rows, 'costs': costs}


@dataclass
class ComparisonReport:
    rows: pd.DataFrame
    summary: pd.DataFrame
    histogram: pd.DataFrame

    @property
    def failed(self) -> int:
        return int((self.rows['status'] == 'failed').sum())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rows': len(self.rows),
            'failed': self.failed,
            'summary': self.summary.to_dict(orient='records'),
        }


def summarize_rows(rows: pd.DataFrame, assigners: Sequence[str]) -> pd.DataFrame:
    ok = rows[rows['status'] == 'ok']
    iou_rates = ok[ok['assigner'] == 'iou'].set_index('scene_id')['inconsistency_rate']
    records = []
    for name in assigners:
        mine = ok[ok['assigner'] == name]
        rates = mine['inconsistency_rate'].astype(float)
        total = pd.to_numeric(mine['mean_total_cost'], errors='coerce')
        delta = pd.to_numeric(mine['mean_abs_delta_cost'], errors='coerce')
        not_worse = None
        if name != 'iou' and len(iou_rates):
            paired = mine.set_index('scene_id')['inconsistency_rate'].astype(float)
            common = paired.index.intersection(iou_rates.index)
            not_worse = int((paired[common] <= iou_rates[common].astype(float)).sum())
        records.append({
            'assigner': name,
            'scenes_ok': len(mine),
            'scenes_failed': int(((rows['assigner'] == name) & (rows['status'] == 'failed')).sum()),
            'mean_inconsistency': rates.mean() if len(rates) else None,
            'median_inconsistency': rates.median() if len(rates) else None,
            'mean_positives': mine['positives'].astype(float).mean() if len(mine) else None,
            'mean_total_cost': total.mean() if total.notna().any() else None,
            'median_total_cost': total.median() if total.notna().any() else None,
            'mean_abs_delta_cost': delta.mean() if delta.notna().any() else None,
            'not_worse_than_iou': not_worse,
        })
    return pd.DataFrame(records, columns=SUMMARY_COLUMNS)


def cost_histograms(costs: Dict[str, List[float]], assigners: Sequence[str], bins: int) -> pd.DataFrame:
    """Histograms over shared bin edges so assigners plot on one axis."""
    everything = [c for name in assigners for c in costs.get(name, [])]
    if not everything:
        return pd.DataFrame(columns=HISTOGRAM_COLUMNS)
    low, high = min(everything), max(everything)
    if high <= low:
        high = low + 1.0
    edges = np.linspace(low, high, bins + 1)
    records = []
    for name in assigners:
        counts, _ = np.histogram(costs.get(name, []), bins=edges)
        for left, right, count in zip(edges[:-1], edges[1:], counts):
            records.append({'assigner': name, 'bin_left': float(left),
                            'bin_right': float(right), 'count': int(count)})
    return pd.DataFrame(records, columns=HISTOGRAM_COLUMNS)


class ComparisonService:
    """
    Runs every listed assigner over every scene slot and writes
    ``comparison.csv``, ``summary.csv`` and ``cost_histogram.csv``
    """

    def __init__(self):
        self.use_workers = settings.COMPARE_SETTINGS['USE_WORKERS']
        self.batch_size = settings.COMPARE_SETTINGS['BATCH_SIZE']

    def _dispatch(self, cfg: ExperimentConfig, indices: List[int], figure1: bool) -> List[Dict[str, Any]]:
        from celery import group

        from .tasks import compare_scene_task

        payload = cfg.model_dump_json()
        outcomes: List[Dict[str, Any]] = []
        for batch in chunk_list(indices, self.batch_size):
            job = group(compare_scene_task.s(payload, index, figure1) for index in batch)
            if self.use_workers:
                outcomes.extend(job.apply_async().get())
            else:
                outcomes.extend(job.apply().get())
        return outcomes

    @measure_time
    def run(self, cfg: ExperimentConfig, out_dir: PathLike, figure1: bool = False) -> ComparisonReport:
        directory = ensure_directory(out_dir)
        indices = [0] if figure1 else list(range(cfg.scene_count))
        logger.info("Comparison started", scenes=len(indices), assigners=list(cfg.assigners),
                    figure1=figure1, workers=self.use_workers)

        outcomes = self._dispatch(cfg, indices, figure1)

        order = {name: k for k, name in enumerate(cfg.assigners)}
        rows = [row for outcome in outcomes for row in outcome['rows']]
        rows.sort(key=lambda r: (r['scene_id'], order[r['assigner']]))
        costs: Dict[str, List[float]] = {name: [] for name in cfg.assigners}
        for outcome in sorted(outcomes, key=lambda o: o['rows'][0]['scene_id'] if o['rows'] else -1):
            for name, values in outcome['costs'].items():
                costs[name].extend(values)

        frame = write_frame(rows, ROW_COLUMNS, directory / 'comparison.csv')
        summary = summarize_rows(frame, cfg.assigners)
        write_frame(summary.to_dict(orient='records'), SUMMARY_COLUMNS, directory / 'summary.csv')
        histogram = cost_histograms(costs, cfg.assigners, cfg.histogram_bins)
        write_frame(histogram.to_dict(orient='records'), HISTOGRAM_COLUMNS, directory / 'cost_histogram.csv')

        report = ComparisonReport(rows=frame, summary=summary, histogram=histogram)
        logger.info("Comparison finished", rows=len(frame), failed=report.failed)
        return report


class EvaluationService:
    """
    Miss rate over FPPI for one subset, or the full column suite
    """

    def __init__(self):
        self.floor = settings.DEPTHASSIGN['MISS_RATE_FLOOR']

    @measure_time
    def run(self, gt_path: PathLike, det_path: PathLike, subset: str, iou_thr: float,
            out_dir: PathLike, suite: bool = False) -> Dict[str, Any]:
        directory = ensure_directory(out_dir)
        spec = get_subset(subset)
        with ExceptionContext('evaluate', gt_file=str(gt_path), det_file=str(det_path)):
            annotations = read_annotations(gt_path)
            detections = read_detections(det_path)
            score, curve = evaluate_subset(detections, annotations, spec, iou_thr, self.floor)

        write_curve(curve.as_rows(), directory / 'curve.csv')
        summary = score.to_dict()
        if suite:
            summary['suite'] = evaluate_suite(detections, annotations, self.floor)
        write_json(summary, directory / 'evaluation.json')
        return summary


class RescoreService:
    """
    Applies confidence rescoring to a detection file using aligned cost records
    """

    def run(self, det_path: PathLike, cost_path: PathLike, out_dir: PathLike) -> Path:
        det_path = Path(det_path)
        directory = ensure_directory(out_dir)
        target = directory / det_path.name
        if target.resolve() == det_path.resolve():
            raise ValidationError("Rescored output would overwrite the input detections",
                                  field_errors={'out': [str(directory)]})
        with ExceptionContext('rescore', det_file=str(det_path), cost_file=str(cost_path)):
            source = read_text(det_path)
            detections = read_detections(det_path)
            rescored = rescore_detections(detections, read_cost_records(cost_path))
            write_rescored_detections(target, source, [d.score for d in rescored])
        logger.info("Detections rescored", count=len(rescored), out=str(target))
        return target


def subset_names() -> List[str]:
    return list(SUBSETS)
