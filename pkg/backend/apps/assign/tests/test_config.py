import json

import pytest

from apps.assign.config import (
    AssignerConfig, CostWeights, ExperimentConfig, SceneParams, load_experiment_config,
    parse_experiment_config,
)
from apps.core.exceptions import ConfigurationError


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.assigners == ('iou', 'depth')
    assert cfg.assigner.n_pos == 256
    assert cfg.assigner.cost_ceiling == float('inf')
    assert cfg.assigner.candidate_iou_thr == 0.5
    assert cfg.assigner.level_ranges.names == ('C3', 'C4', 'C5', 'C6', 'C7')


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_experiment_config({'assigner': {'n_pos': 8, 'topk': 3}})
    assert 'assigner.topk' in excinfo.value.field_errors


@pytest.mark.parametrize('data', [
    {'scene_count': 0},
    {'assigner': {'iou_pos_thr': 0.3, 'iou_neg_thr': 0.5}},
    {'assigner': {'cost_weights': {'lambda_d': 0, 'lambda_z': 0}}},
    {'assigner': {'level_uppers': [128, 64]}},
    {'assigner': {'candidate_iou_thr': 1.5}},
    {'assigners': []},
    {'assigners': ['depth', 'depth']},
    {'assigners': ['hungarian']},
    {'scene': {'z_min': 30, 'z_max': 20}},
    {'scene': {'z_max': 90}},
])
def test_invalid_documents(data):
    with pytest.raises(ConfigurationError):
        parse_experiment_config(data)


def test_null_candidate_gate_admits_every_proposal():
    assert parse_experiment_config({'assigner': {'candidate_iou_thr': None}}).assigner.candidate_iou_thr is None


def test_configuration_errors_exit_with_one():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_experiment_config({'scene_count': -1})
    assert excinfo.value.exit_code == 1


def test_overrides_reach_nested_models():
    cfg = ExperimentConfig(assigner=AssignerConfig(n_pos=16)).with_overrides(seed=7, normalize=True, scene_count=3)
    assert (cfg.base_seed, cfg.assigner.rng_seed, cfg.scene_count) == (7, 7, 3)
    assert cfg.assigner.cost_weights == CostWeights(normalize=True)
    assert cfg.assigner.n_pos == 16


def test_overrides_are_revalidated():
    with pytest.raises(ConfigurationError):
        ExperimentConfig().with_overrides(scene_count=0)


def test_models_are_frozen():
    with pytest.raises(Exception):
        SceneParams().stride = 8.0


def test_load_from_file(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'scene_count': 5, 'assigners': ['depth-per-level']}))
    cfg = load_experiment_config(path)
    assert cfg.scene_count == 5
    assert cfg.assigners == ('depth-per-level',)


def test_load_without_path_gives_defaults():
    assert load_experiment_config(None) == ExperimentConfig()


@pytest.mark.parametrize('text', ['{"scene_count": ', '[1, 2]'])
def test_load_rejects_bad_documents(tmp_path, text):
    path = tmp_path / 'run.json'
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        load_experiment_config(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_experiment_config(tmp_path / 'absent.json')
