"""
Django settings for the optimarl project.

The project has no web surface or database; Django provides the management
command runner, settings and logging configuration for the experiment harness.
Every value below can be overridden from the environment or a ``.env`` file.
"""

from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='optimarl-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'optimarl',
]

DATABASES = {}

USE_TZ = True

TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Experiment harness

OPTIMARL_OUTPUT_DIR = config('OPTIMARL_OUTPUT_DIR', default=str(BASE_DIR / 'results'))

OPTIMARL_JOBS = config('OPTIMARL_JOBS', default=1, cast=int)


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'optimarl': {
            'handlers': ['console'],
            'level': config('OPTIMARL_LOG_LEVEL', default='INFO'),
            'propagate': False,
        },
    },
}
