from django.utils import timezone
from typing import Dict, Any, Optional, List
import structlog

logger = structlog.get_logger(__name__)


class BaseAssignError(Exception):
    """
    Base exception class for all assignment-tooling errors
    Provides consistent error structure, logging and a process exit code
    """

    exit_code = 3
    default_detail = 'An error occurred'
    default_code = 'error'
    category = 'general'

    def __init__(self, detail: str = None, code: str = None, extra_data: Dict[str, Any] = None):
        self.detail = detail or self.default_detail
        self.code = code or self.default_code
        self.extra_data = extra_data or {}
        self.timestamp = timezone.now()

        self.log_exception()

        super().__init__(self.detail)

    def log_exception(self):
        """Log the exception with structured data"""
        logger.error(
            f"{self.__class__.__name__} raised",
            detail=self.detail,
            code=self.code,
            exit_code=self.exit_code,
            category=self.category,
            extra_data=self.extra_data,
            timestamp=self.timestamp.isoformat(),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error': self.code,
            'message': self.detail,
            'exit_code': self.exit_code,
            'category': self.category,
            'timestamp': self.timestamp.isoformat(),
            **self.extra_data
        }


class ValidationError(BaseAssignError):
    """
    Invalid arguments or parameter values
    """

    exit_code = 1
    default_detail = 'Invalid input'
    default_code = 'validation_error'
    category = 'validation'

    def __init__(self, detail: str = None, field_errors: Dict[str, List[str]] = None, **kwargs):
        self.field_errors = field_errors or {}
        super().__init__(detail, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        if self.field_errors:
            data['field_errors'] = self.field_errors
        return data


class ConfigurationError(ValidationError):
    """
    Configuration document could not be read or failed validation
    """

    default_detail = 'Invalid configuration'
    default_code = 'configuration_error'
    category = 'configuration'


class DataError(BaseAssignError):
    """
    Input data is malformed or inconsistent
    """

    exit_code = 2
    default_detail = 'Invalid input data'
    default_code = 'data_error'
    category = 'data'


class InvalidBoxError(DataError):
    default_detail = 'Invalid bounding box'
    default_code = 'invalid_box'


class DegenerateBoxError(DataError):
    """
    Box with non-positive area where a positive one is required
    """

    default_detail = 'Degenerate bounding box'
    default_code = 'degenerate_box'


class OutOfExtentError(DataError):
    """
    Point outside the depth grid extent
    """

    default_detail = 'Point outside depth grid extent'
    default_code = 'out_of_extent'

    def __init__(self, x: float = None, y: float = None, **kwargs):
        detail = kwargs.pop('detail', None)
        if detail is None and x is not None and y is not None:
            detail = f"Point ({x}, {y}) lies outside the depth grid extent"
        super().__init__(detail, extra_data={'x': x, 'y': y}, **kwargs)


class EmptyInputError(DataError):
    default_detail = 'Required input is empty'
    default_code = 'empty_input'


class EmptyEvaluationError(DataError):
    default_detail = 'No ground truth left to evaluate'
    default_code = 'empty_evaluation'


class MissingPredictionError(DataError):
    """
    A positive proposal has no matching prediction
    """

    default_detail = 'Prediction missing for positive proposal'
    default_code = 'missing_prediction'

    def __init__(self, proposal_id: int = None, **kwargs):
        detail = kwargs.pop('detail', None)
        if detail is None and proposal_id is not None:
            detail = f"No prediction for positive proposal {proposal_id}"
        super().__init__(detail, extra_data={'proposal_id': proposal_id}, **kwargs)


class IdMismatchError(DataError):
    """
    Two aligned inputs disagree on record ids
    """

    default_detail = 'Record ids do not align'
    default_code = 'id_mismatch'

    def __init__(self, record_id: int = None, **kwargs):
        detail = kwargs.pop('detail', None)
        if detail is None and record_id is not None:
            detail = f"Record id {record_id} has no counterpart"
        super().__init__(detail, extra_data={'record_id': record_id}, **kwargs)


class OracleLimitError(DataError):
    default_detail = 'Rectangle too large for exhaustive path enumeration'
    default_code = 'oracle_limit'


class RecordFormatError(DataError):
    """
    Unparseable line in a record file
    """

    default_detail = 'Malformed record'
    default_code = 'record_format'

    def __init__(self, detail: str = None, source: str = None, line_number: int = None, **kwargs):
        self.source = source
        self.line_number = line_number
        if source is not None and line_number is not None:
            detail = f"{source}:{line_number}: {detail or self.default_detail}"
        super().__init__(detail, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        if self.source is not None:
            data['source'] = self.source
            data['line'] = self.line_number
        return data


class InternalError(BaseAssignError):
    """
    Broken internal guarantee
    """

    exit_code = 3
    default_detail = 'Internal error'
    default_code = 'internal_error'
    category = 'internal'


class FixtureError(InternalError):
    default_detail = 'Fixture construction violated its own constraints'
    default_code = 'fixture_error'


class ExceptionContext:
    """
    Context manager for exception handling with additional data
    """

    def __init__(self, operation: str, **context_data):
        self.operation = operation
        self.context_data = context_data

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        if exc_type and issubclass(exc_type, BaseAssignError):
            exc_value.extra_data.update({
                'operation': self.operation,
                **self.context_data
            })

        return False


def validate_numeric_range(value: float, min_value: float = None,
                           max_value: float = None, field_name: str = 'value') -> None:
    """
    Validate numeric value is within range
    """
    errors = []

    if min_value is not None and value < min_value:
        errors.append(f'Value must be at least {min_value}')

    if max_value is not None and value > max_value:
        errors.append(f'Value must be at most {max_value}')

    if errors:
        raise ValidationError(
            detail=f'Invalid {field_name}',
            field_errors={field_name: errors}
        )


def field_errors_from_pydantic(exc) -> Dict[str, List[str]]:
    """
    Flatten a pydantic ValidationError into dotted field paths
    """
    field_errors: Dict[str, List[str]] = {}
    for error in exc.errors():
        location = '.'.join(str(part) for part in error.get('loc', ())) or '__root__'
        field_errors.setdefault(location, []).append(error.get('msg', 'invalid'))
    return field_errors


def describe(exc: BaseException, limit: Optional[int] = 5) -> str:
    """
    One-line message for a raised error, including field errors when present
    """
    message = str(exc)
    field_errors = getattr(exc, 'field_errors', None)
    if field_errors:
        items = list(field_errors.items())[:limit]
        parts = [f"{field}: {'; '.join(msgs)}" for field, msgs in items]
        message = f"{message} ({', '.join(parts)})"
    return message
