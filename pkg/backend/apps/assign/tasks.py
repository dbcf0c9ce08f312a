import json
from typing import Any, Dict

import structlog
from celery import shared_task

from apps.core.utils import measure_time
from .config import parse_experiment_config
from .services import compare_scene

logger = structlog.get_logger(__name__)


@shared_task(bind=True)
@measure_time
def compare_scene_task(self, config_json: str, scene_index: int, figure1: bool = False) -> Dict[str, Any]:
    """
    Compare every configured assigner on one scene slot
    """
    cfg = parse_experiment_config(json.loads(config_json))
    outcome = compare_scene(cfg, scene_index, figure1)

    logger.debug(
        "Scene compared",
        task_id=self.request.id,
        scene_id=scene_index,
        failed=sum(1 for row in outcome['rows'] if row['status'] == 'failed'),
    )
    return outcome
