import json
import time

import numpy as np
import pytest
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError

from apps.core.exceptions import (
    ConfigurationError, DataError, ExceptionContext, IdMismatchError, InternalError, OutOfExtentError,
    RecordFormatError, ValidationError, describe, field_errors_from_pydantic, validate_numeric_range,
)
from apps.core.utils import ExtendedJSONEncoder, PerformanceTimer, chunk_list, deep_merge_dicts, measure_time


class TestExceptions:
    @pytest.mark.parametrize('exc_class, code', [
        (ValidationError, 1), (ConfigurationError, 1), (DataError, 2), (IdMismatchError, 2), (InternalError, 3),
    ])
    def test_exit_codes(self, exc_class, code):
        assert exc_class().exit_code == code

    def test_to_dict(self):
        data = DataError('bad rows', extra_data={'rows': 3}).to_dict()
        assert data['error'] == 'data_error'
        assert data['message'] == 'bad rows'
        assert data['exit_code'] == 2
        assert data['rows'] == 3

    def test_record_format_error_prefixes_location(self):
        exc = RecordFormatError('expected 6 fields', source='gt.txt', line_number=4)
        assert str(exc) == 'gt.txt:4: expected 6 fields'
        assert exc.to_dict()['line'] == 4

    def test_out_of_extent_names_the_point(self):
        exc = OutOfExtentError(3.0, -1.0)
        assert '(3.0, -1.0)' in str(exc)
        assert exc.extra_data == {'x': 3.0, 'y': -1.0}

    def test_context_is_attached(self):
        with pytest.raises(DataError) as excinfo:
            with ExceptionContext('evaluate', gt_file='gt.txt'):
                raise DataError('broken')
        assert excinfo.value.extra_data == {'operation': 'evaluate', 'gt_file': 'gt.txt'}

    def test_context_leaves_foreign_errors_alone(self):
        with pytest.raises(KeyError):
            with ExceptionContext('evaluate'):
                raise KeyError('x')

    def test_describe_lists_field_errors(self):
        exc = ValidationError('Invalid run', field_errors={'scene_count': ['must be positive']})
        assert describe(exc) == 'Invalid run (scene_count: must be positive)'
        assert describe(RuntimeError('plain')) == 'plain'

    def test_numeric_range(self):
        validate_numeric_range(0.5, 0.0, 1.0)
        with pytest.raises(ValidationError) as excinfo:
            validate_numeric_range(1.5, 0.0, 1.0, field_name='score')
        assert excinfo.value.field_errors == {'score': ['Value must be at most 1.0']}

    def test_pydantic_errors_flatten_to_dotted_paths(self):
        class Inner(BaseModel):
            n: int = Field(gt=0)

        class Outer(BaseModel):
            inner: Inner

        with pytest.raises(PydanticValidationError) as excinfo:
            Outer.model_validate({'inner': {'n': 0}})
        assert list(field_errors_from_pydantic(excinfo.value)) == ['inner.n']


class TestUtils:
    def test_chunk_list(self):
        assert chunk_list([1, 2, 3, 4, 5], 2) == [[1, 2], [3, 4], [5]]
        assert chunk_list([], 3) == []

    def test_deep_merge_keeps_siblings(self):
        merged = deep_merge_dicts({'a': {'b': 1, 'c': 2}, 'd': 3}, {'a': {'b': 5}})
        assert merged == {'a': {'b': 5, 'c': 2}, 'd': 3}

    def test_deep_merge_does_not_mutate(self):
        base = {'a': {'b': 1}}
        deep_merge_dicts(base, {'a': {'b': 2}})
        assert base == {'a': {'b': 1}}

    def test_measure_time_passes_results_and_errors_through(self):
        @measure_time
        def double(x):
            return 2 * x

        @measure_time
        def fail():
            raise DataError('nope')

        assert double(4) == 8
        assert double.__name__ == 'double'
        with pytest.raises(DataError):
            fail()

    def test_performance_timer(self):
        with PerformanceTimer('sleep') as timer:
            time.sleep(0.01)
        assert timer.duration > 0.0
        assert PerformanceTimer('idle').duration == 0.0

    def test_json_encoder(self):
        class Report:
            def to_dict(self):
                return {'ok': True}

        payload = {'a': np.int32(2), 'b': np.float32(0.5), 'c': np.arange(3), 'd': frozenset({3, 1}), 'e': Report()}
        assert json.loads(json.dumps(payload, cls=ExtendedJSONEncoder)) == {
            'a': 2, 'b': 0.5, 'c': [0, 1, 2], 'd': [1, 3], 'e': {'ok': True},
        }
