"""
Django settings for the depthassign project.

The project has no web surface: Django provides configuration, app
loading and the management-command runner for the assignment tooling.
"""

import sys
from pathlib import Path

import structlog
from decouple import config, Csv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='depthassign-local-only-key')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = config('ALLOWED_HOSTS', default='localhost,127.0.0.1', cast=Csv())

# Application definition
DJANGO_APPS = [
    'django.contrib.contenttypes',
]

LOCAL_APPS = [
    'apps.core',
    'apps.assign',
]

INSTALLED_APPS = DJANGO_APPS + LOCAL_APPS

# Nothing is persisted; the database only satisfies Django's app registry.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

# Celery Configuration
# Scenes are compared in-process unless workers are switched on.
CELERY_TASK_ALWAYS_EAGER = not config('COMPARE_USE_WORKERS', default=False, cast=bool)
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_BROKER_URL = config('CELERY_BROKER_URL', default='memory://')
CELERY_RESULT_BACKEND = config('CELERY_RESULT_BACKEND', default='cache+memory://')

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Assignment defaults
DEPTHASSIGN = {
    'GRID_STRIDE': config('DEPTH_GRID_STRIDE', default=4.0, cast=float),
    'BACKGROUND_DEPTH': config('BACKGROUND_DEPTH', default=80.0, cast=float),
    'MISS_RATE_FLOOR': config('MISS_RATE_FLOOR', default=1e-10, cast=float),
    'SIMILARITY_THRESHOLD': config('SIMILARITY_THRESHOLD', default=0.4, cast=float),
}

# Comparison runs
COMPARE_SETTINGS = {
    'USE_WORKERS': config('COMPARE_USE_WORKERS', default=False, cast=bool),
    'BATCH_SIZE': config('COMPARE_BATCH_SIZE', default=25, cast=int),
    'HISTOGRAM_BINS': config('COMPARE_HISTOGRAM_BINS', default=20, cast=int),
}

LOG_LEVEL = config('LOG_LEVEL', default='WARNING')

# Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
            'stream': 'ext://sys.stderr',
        },
    },
    'root': {
        'level': LOG_LEVEL,
        'handlers': ['console'],
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
        'apps': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'celery': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
    },
}

structlog.configure(
    processors=[
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.processors.TimeStamper(fmt='iso'),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.processors.KeyValueRenderer(key_order=['event', 'logger', 'level']),
    ],
    logger_factory=structlog.stdlib.LoggerFactory(),
    wrapper_class=structlog.stdlib.BoundLogger,
    cache_logger_on_first_use=True,
)

# Testing
if 'pytest' in sys.modules or 'test' in sys.argv:
    CELERY_TASK_ALWAYS_EAGER = True
    CELERY_TASK_EAGER_PROPAGATES = True
    COMPARE_SETTINGS['USE_WORKERS'] = False
