from .core import (
    CriterionTrace,
    EsaResult,
    LadderSpec,
    StopRule,
    aggregate_points,
    as_selection,
    exp_weights,
    run_esa,
    run_full,
    run_ms,
    select_best,
)
from .config import Config
from .registry import Registry, registry
from . import gauss_seq, vgmm, erm, harness  # noqa: F401 (registrations)

__version__ = "0.1.0"
