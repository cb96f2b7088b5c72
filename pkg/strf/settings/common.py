"""
Common strf settings

Handling of environment variables, see: https://django-environ.readthedocs.io/en/latest/
Values from a ``.env`` file in the working directory override the defaults below.
"""

import os

import environ
from path import Path as path

env = environ.Env(
    STRF_SEED=(int, 0),
    STRF_THREADS=(int, 1),
    STRF_EVENT_THRESHOLD=(float, 0.3),
    STRF_NOISE_RATE=(float, 0.005),
    STRF_OUTPUT_ROOT=(str, "runs"),
    STRF_LOG_LEVEL=(str, "INFO"),
)
environ.Env.read_env(os.path.join(os.getcwd(), ".env"))


def logging_config(level="INFO"):
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "standard": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
        },
        "handlers": {
            "console": {"class": "logging.StreamHandler", "formatter": "standard", "stream": "ext://sys.stderr"},
        },
        "loggers": {
            "strf": {"handlers": ["console"], "level": level, "propagate": False},
        },
    }


def plugin_settings(settings):
    """
    Injects strf defaults into django settings
    """
    settings.STRF_SEED = env("STRF_SEED")
    settings.STRF_THREADS = env("STRF_THREADS")
    settings.STRF_EVENT_THRESHOLD = env("STRF_EVENT_THRESHOLD")
    settings.STRF_NOISE_RATE = env("STRF_NOISE_RATE")
    settings.STRF_OUTPUT_ROOT = path(env("STRF_OUTPUT_ROOT"))
    settings.LOGGING = logging_config(env("STRF_LOG_LEVEL"))
