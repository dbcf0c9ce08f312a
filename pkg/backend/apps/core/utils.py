import time
from functools import wraps
from typing import Any, Callable, Dict, List

import numpy as np
import structlog
from django.core.serializers.json import DjangoJSONEncoder

logger = structlog.get_logger(__name__)


def chunk_list(lst: List[Any], chunk_size: int) -> List[List[Any]]:
    """
    Split list into chunks of specified size
    """
    return [lst[i:i + chunk_size] for i in range(0, len(lst), chunk_size)]


def deep_merge_dicts(dict1: Dict[str, Any], dict2: Dict[str, Any]) -> Dict[str, Any]:
    """
    Deep merge two dictionaries
    """
    result = dict1.copy()

    for key, value in dict2.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = deep_merge_dicts(result[key], value)
        else:
            result[key] = value

    return result


# Decorators

def measure_time(func: Callable) -> Callable:
    """
    Decorator to measure and log function execution time
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()

        try:
            result = func(*args, **kwargs)
            duration = time.perf_counter() - start_time

            logger.info(
                "Function execution completed",
                function=func.__name__,
                module=func.__module__,
                duration_ms=round(duration * 1000, 2),
            )

            return result

        except Exception as e:
            duration = time.perf_counter() - start_time

            logger.error(
                "Function execution failed",
                function=func.__name__,
                module=func.__module__,
                duration_ms=round(duration * 1000, 2),
                exception=str(e),
                exception_type=e.__class__.__name__,
            )

            raise

    return wrapper


# Performance utilities

class PerformanceTimer:
    """
    Context manager for timing operations
    """

    def __init__(self, operation_name: str, **context):
        self.operation_name = operation_name
        self.context = context
        self.start_time = None
        self.end_time = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.end_time = time.perf_counter()

        logger.debug(
            "Operation completed",
            operation=self.operation_name,
            duration_ms=round(self.duration * 1000, 2),
            success=exc_type is None,
            **self.context,
        )

    @property
    def duration(self) -> float:
        """Get duration in seconds"""
        if self.start_time is not None and self.end_time is not None:
            return self.end_time - self.start_time
        return 0.0


class ExtendedJSONEncoder(DjangoJSONEncoder):
    """
    JSON encoder that also handles numpy scalars/arrays, sets and dataclass-like objects
    """

    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, (set, frozenset)):
            return sorted(obj)
        elif hasattr(obj, 'to_dict'):
            return obj.to_dict()

        return super().default(obj)
