"""
Django settings for the difftd_lab project.

The project has no web surface: Django provides configuration, the
management-command CLI, the test runner and the SweepRecord table.
"""

from pathlib import Path
import os

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / ".env")

SECRET_KEY = os.environ.get("SECRET_KEY", "difftd-lab-local-only")

DEBUG = os.environ.get("DEBUG", "0") == "1"

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    # Local
    "core",
]


# Database

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

TIME_ZONE = "UTC"

USE_TZ = True


# Logging

LAB_LOG_LEVEL = os.environ.get("LAB_LOG_LEVEL", "INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "td_engine": {"handlers": ["console"], "level": LAB_LOG_LEVEL, "propagate": False},
        "core": {"handlers": ["console"], "level": LAB_LOG_LEVEL, "propagate": False},
    },
}


# Lab Configuration
LAB_CONFIG = {
    # Numerical tolerances
    "SOLVER_TOL": float(os.environ.get("SOLVER_TOL", 1e-10)),
    "STABILITY_TOL": float(os.environ.get("STABILITY_TOL", 1e-9)),
    "RANK_RTOL": float(os.environ.get("RANK_RTOL", 1e-9)),
    "KERNEL_TOL": float(os.environ.get("KERNEL_TOL", 1e-8)),

    # Environment generation
    "TRANSITION_FLOOR": float(os.environ.get("TRANSITION_FLOOR", 1e-3)),

    # Sweeps
    "WORKERS": int(os.environ.get("WORKERS", 1)),  # 1 runs inline, no process pool
    "OUTPUT_DIR": os.environ.get("OUTPUT_DIR", "results"),
    "PRESETS_DIR": Path(os.environ.get("PRESETS_DIR", BASE_DIR / "presets")),
    "SWEEP_DB_PATH": os.environ.get("SWEEP_DB_PATH", ":memory:"),
}
