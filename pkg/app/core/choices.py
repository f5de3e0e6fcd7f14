"""
Graphfeed - Choice Fields

Centralized definition of the enumerations used across the engine.
Using Django's TextChoices for labels in reports and command help.
"""
from __future__ import annotations

from django.db import models


class CachePolicy(models.TextChoices):
    """
    Feature-cache replacement policies.

    BELADY is the policy the pipeline runs; the others are baselines
    evaluated on the same ids traces.
    """
    NONE = "none", "No cache"
    STATIC_DEGREE = "static_degree", "Static out-degree cache"
    LRU = "lru", "Least recently used"
    BELADY = "belady", "Belady (optimal)"


class Stage(models.TextChoices):
    """
    Runtime stages of one superbatch.

    Order of execution:
    - SAMPLE -> PRECOMPUTE -> CACHE_INIT -> MAIN_LOOP
    """
    SAMPLE = "sample", "Superbatch sample"
    PRECOMPUTE = "precompute", "Changeset precomputation"
    CACHE_INIT = "cache_init", "Feature cache initialization"
    MAIN_LOOP = "main_loop", "Main loop"


class ReportCategory(models.TextChoices):
    """
    Time categories of the report breakdown.

    They partition the measured wall time of a run.
    """
    INSPECT = "inspect", "Inspect"
    SWITCH = "switch", "Switch"
    DATA_PREP = "data_prep", "Data prep"
    CACHE_UPDATE = "cache_update", "Cache update"
    COMPUTE = "compute", "Compute"
