"""
File formats: depth-grid text files, scene documents, annotation/detection
line records, rescoring cost files and CSV reports.
"""

import json
import re
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from apps.core.exceptions import DataError, RecordFormatError
from apps.core.utils import ExtendedJSONEncoder
from .assignment import AssignmentResult, RankedProposal
from .depthfield import DepthGrid, matching_cost
from .evaluation import Annotation, Detection
from .geometry import BBox
from .scenesim import CameraModel, Pedestrian3D, Scene
from .supervision import CostRecord

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

REPORT_COLUMNS = ['id', 'role', 'gt', 'd_cost', 'z_cost', 'total_cost']
CURVE_COLUMNS = ['threshold', 'fppi', 'miss']
_LAST_FIELD = re.compile(r'(\S+)\s*$')


def read_text(path: PathLike) -> str:
    try:
        return Path(path).read_text(encoding='utf-8')
    except OSError as exc:
        raise DataError(f"Cannot read {path}: {exc.strerror or exc}")


def _read_lines(path: PathLike) -> List[str]:
    return read_text(path).splitlines()


def _write_text(path: PathLike, text: str) -> None:
    try:
        Path(path).write_text(text, encoding='utf-8')
    except OSError as exc:
        raise DataError(f"Cannot write {path}: {exc.strerror or exc}")


# Depth grids

def format_depth_grid(grid: DepthGrid) -> str:
    lines = [f"{grid.cols} {grid.rows} {grid.stride!r}"]
    lines.extend(' '.join(repr(float(v)) for v in row) for row in grid.values)
    return '\n'.join(lines) + '\n'


def parse_depth_grid(text: str, source: str = '<depth>') -> DepthGrid:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise RecordFormatError('empty depth file', source=source, line_number=1)
    header = lines[0].split()
    try:
        cols, rows, stride = int(header[0]), int(header[1]), float(header[2])
    except (IndexError, ValueError):
        raise RecordFormatError('header must be "width height stride"', source=source, line_number=1)
    if len(lines) - 1 != rows:
        raise RecordFormatError(f'expected {rows} rows, found {len(lines) - 1}', source=source, line_number=1)

    values = np.empty((rows, cols), dtype=np.float64)
    for r, line in enumerate(lines[1:]):
        fields = line.split()
        if len(fields) != cols:
            raise RecordFormatError(f'expected {cols} values, found {len(fields)}',
                                    source=source, line_number=r + 2)
        try:
            values[r] = [float(v) for v in fields]
        except ValueError:
            raise RecordFormatError('non-numeric depth value', source=source, line_number=r + 2)
    return DepthGrid(values, stride=stride)


def write_depth_grid(grid: DepthGrid, path: PathLike) -> None:
    _write_text(path, format_depth_grid(grid))


def read_depth_grid(path: PathLike) -> DepthGrid:
    return parse_depth_grid('\n'.join(_read_lines(path)), source=str(path))


# Scenes

def scene_to_dict(scene: Scene, depth_file: str) -> Dict[str, Any]:
    return {
        'camera': scene.camera.to_dict(),
        'pedestrians': [p.to_dict() for p in scene.pedestrians],
        'gt_boxes': [
            {'box': b.as_list(), 'visibility': p.visibility}
            for b, p in zip(scene.gt_boxes, scene.pedestrians)
        ],
        'proposals': [
            {'id': p.id, 'box': p.box.as_list(), 'confidence': p.confidence}
            for p in scene.proposals
        ],
        'seed': scene.seed,
        'depth_file': depth_file,
    }


def write_scene(scene: Scene, directory: PathLike, stem: str) -> Tuple[Path, Path]:
    """Writes ``<stem>.json`` and ``<stem>.depth``; returns both paths."""
    directory = Path(directory)
    scene_path = directory / f"{stem}.json"
    depth_path = directory / f"{stem}.depth"
    write_depth_grid(scene.depth, depth_path)
    document = scene_to_dict(scene, depth_path.name)
    _write_text(scene_path, json.dumps(document, indent=2, sort_keys=True, cls=ExtendedJSONEncoder) + '\n')
    return scene_path, depth_path


def read_scene(path: PathLike) -> Scene:
    path = Path(path)
    try:
        data = json.loads('\n'.join(_read_lines(path)))
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f'invalid JSON: {exc.msg}', source=str(path), line_number=exc.lineno)
    try:
        camera = CameraModel(**data['camera'])
        pedestrians = tuple(Pedestrian3D(**p) for p in data['pedestrians'])
        gt_boxes = tuple(BBox.from_sequence(g['box']) for g in data['gt_boxes'])
        proposals = tuple(
            RankedProposal(id=int(p['id']), box=BBox.from_sequence(p['box']), confidence=float(p['confidence']))
            for p in data['proposals']
        )
        depth = read_depth_grid(path.parent / data['depth_file'])
        seed = data.get('seed')
    except (KeyError, TypeError) as exc:
        raise RecordFormatError(f'scene document is missing or mistypes {exc}', source=str(path), line_number=1)
    return Scene(camera=camera, pedestrians=pedestrians, gt_boxes=gt_boxes, depth=depth,
                 proposals=proposals, seed=seed)


# Line records

def _parse_records(lines: Iterable[str], source: str, build: Callable[[str, BBox, float], Any]) -> list:
    records = []
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        fields = line.split()
        if len(fields) != 6:
            raise RecordFormatError(f'expected 6 fields, found {len(fields)}', source=source, line_number=number)
        try:
            coords = [float(v) for v in fields[1:5]]
            value = float(fields[5])
        except ValueError:
            raise RecordFormatError('non-numeric field', source=source, line_number=number)
        try:
            records.append(build(fields[0], BBox.from_sequence(coords), value))
        except DataError as exc:
            raise RecordFormatError(exc.detail, source=source, line_number=number)
    return records


def read_annotations(path: PathLike) -> List[Annotation]:
    return _parse_records(_read_lines(path), str(path),
                          lambda image, box, vis: Annotation(box=box, visibility=vis, image_id=image))


def read_detections(path: PathLike) -> List[Detection]:
    """Detections in file order; a detection's id is its zero-based record index."""
    return _parse_records(_read_lines(path), str(path),
                          lambda image, box, score: Detection(box=box, score=score, image_id=image))


def format_detections(detections: Sequence[Detection]) -> str:
    return ''.join(
        f"{d.image_id} {' '.join(repr(v) for v in d.box.as_list())} {d.score!r}\n"
        for d in detections
    )


def rewrite_detection_scores(source: str, scores: Sequence[float]) -> str:
    """
    Detection file text with the score field of each record replaced, in
    record order. Comments, blank lines and the other fields are copied
    through, and a score equal to the value already written keeps its token.
    """
    lines = source.splitlines(keepends=True)
    records = [k for k, raw in enumerate(lines) if raw.strip() and not raw.strip().startswith('#')]
    if len(records) != len(scores):
        raise DataError(f"{len(scores)} scores for {len(records)} detection records")
    for k, score in zip(records, scores):
        token = _LAST_FIELD.search(lines[k])
        if float(token.group(1)) != score:
            lines[k] = f"{lines[k][:token.start(1)]}{score!r}{lines[k][token.end(1):]}"
    return ''.join(lines)


def write_rescored_detections(path: PathLike, source: str, scores: Sequence[float]) -> None:
    _write_text(path, rewrite_detection_scores(source, scores))


def read_cost_records(path: PathLike) -> List[CostRecord]:
    source = str(path)
    records = []
    for number, raw in enumerate(_read_lines(path), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        fields = line.split()
        if len(fields) != 3:
            raise RecordFormatError(f'expected 3 fields, found {len(fields)}', source=source, line_number=number)
        try:
            records.append(CostRecord(id=int(fields[0]), predicted_cost=float(fields[1]),
                                      actual_cost=float(fields[2])))
        except ValueError:
            raise RecordFormatError('expected "id predicted actual"', source=source, line_number=number)
    return records


# CSV reports

def write_frame(rows: Sequence[Dict[str, Any]], columns: Sequence[str], path: PathLike) -> pd.DataFrame:
    frame = pd.DataFrame(list(rows), columns=list(columns))
    try:
        frame.to_csv(path, index=False)
    except OSError as exc:
        raise DataError(f"Cannot write {path}: {exc.strerror or exc}")
    return frame


def assignment_report_rows(result: AssignmentResult, gts: Sequence[BBox],
                           proposals: Sequence[RankedProposal], grid: DepthGrid,
                           weights) -> List[Dict[str, Any]]:
    """
    One row per proposal. Positives report the cost to their GT; other roles
    report the cost to the cheapest GT with an empty ``gt`` column.
    """
    roles = result.role_map()
    rows = []
    for p in sorted(proposals, key=lambda q: q.id):
        gt_index = result.gt_of(p.id)
        if gt_index is not None:
            cost = matching_cost(gts[gt_index], p.box, grid, weights)
        else:
            cost = min((matching_cost(g, p.box, grid, weights) for g in gts), key=lambda c: c.total)
        rows.append({
            'id': p.id,
            'role': roles[p.id].value,
            'gt': gt_index if gt_index is not None else '',
            **cost.to_dict(),
        })
    return rows


def write_assignment_report(rows: Sequence[Dict[str, Any]], path: PathLike) -> pd.DataFrame:
    return write_frame(rows, REPORT_COLUMNS, path)


def write_curve(curve_rows: Sequence[Dict[str, Any]], path: PathLike) -> pd.DataFrame:
    return write_frame(curve_rows, CURVE_COLUMNS, path)


def write_json(data: Any, path: PathLike) -> None:
    _write_text(path, json.dumps(data, indent=2, sort_keys=True, cls=ExtendedJSONEncoder) + '\n')
