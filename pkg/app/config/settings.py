"""
Graphfeed - Django Settings

Engine configuration using django-environ for environment variables.
"""
from __future__ import annotations

import os
from pathlib import Path

import environ

# =============================================================================
# Base Directory
# =============================================================================
BASE_DIR = Path(__file__).resolve().parent.parent

# =============================================================================
# Environment Configuration
# =============================================================================
env = environ.Env(
    DEBUG=(bool, False),
    GRAPHFEED_FANOUTS=(list, ["10", "10", "10"]),
    GRAPHFEED_OVERLAP=(bool, True),
    GRAPHFEED_RETAIN_NEIGHBOR_CACHE=(bool, False),
)

# Read .env file if it exists
environ.Env.read_env(os.path.join(BASE_DIR.parent, ".env"))

# =============================================================================
# Core Settings
# =============================================================================
DEBUG = env("DEBUG")
SECRET_KEY = env("SECRET_KEY", default="graphfeed-local-only")
ALLOWED_HOSTS: list[str] = []

# =============================================================================
# Application Definition
# =============================================================================
# Only the engine app: it carries the storage layer and management commands.
INSTALLED_APPS = [
    "core",
]

# The engine keeps its state in binary files, not in a database.
DATABASES: dict[str, dict] = {}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

TIME_ZONE = "UTC"
USE_TZ = True

# Application version
VERSION = "1.0.0"

# =============================================================================
# Engine Defaults
# =============================================================================
GRAPHFEED = {
    # Directory holding ids/adj/init/update runtime files
    "RUNTIME_DIR": env("GRAPHFEED_RUNTIME_DIR", default=str(BASE_DIR.parent / "runtime")),
    # Block size the storage accounting models
    "PAGE_SIZE": env.int("GRAPHFEED_PAGE_SIZE", default=4096),
    # Per-hop sample counts, first hop first
    "FANOUTS": [int(f) for f in env("GRAPHFEED_FANOUTS")],
    "BATCH_SIZE": env.int("GRAPHFEED_BATCH_SIZE", default=512),
    "SUPERBATCH_SIZE": env.int("GRAPHFEED_SUPERBATCH_SIZE", default=64),
    "EPOCHS": env.int("GRAPHFEED_EPOCHS", default=1),
    "SAMPLER_WORKERS": env.int("GRAPHFEED_SAMPLER_WORKERS", default=4),
    "GATHER_WORKERS": env.int("GRAPHFEED_GATHER_WORKERS", default=1),
    # Run precompute(k) alongside sample(k+1)
    "OVERLAP": env("GRAPHFEED_OVERLAP"),
    "GLOBAL_SEED": env.int("GRAPHFEED_GLOBAL_SEED", default=0),
    "TRAIN_FRACTION": env.float("GRAPHFEED_TRAIN_FRACTION", default=1.0),
    # Keep the neighbor cache in memory between superbatches instead of reloading it
    "RETAIN_NEIGHBOR_CACHE": env("GRAPHFEED_RETAIN_NEIGHBOR_CACHE"),
    "DIRECT_IO": env.bool("GRAPHFEED_DIRECT_IO", default=False),
    # Runtime-file storage the advisor sizes superbatches against (100 GB)
    "TARGET_RUNTIME_BYTES": env.int("GRAPHFEED_TARGET_RUNTIME_BYTES", default=100 * 1024**3),
}

# =============================================================================
# Logging
# =============================================================================
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {process:d} {thread:d} {message}",
            "style": "{",
        },
        "simple": {
            "format": "{levelname} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "WARNING",
    },
    "loggers": {
        "core": {
            "handlers": ["console"],
            "level": env("GRAPHFEED_LOG_LEVEL", default="INFO"),
            "propagate": False,
        },
        "services": {
            "handlers": ["console"],
            "level": env("GRAPHFEED_LOG_LEVEL", default="INFO"),
            "propagate": False,
        },
    },
}
