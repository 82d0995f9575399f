"""cytogate: stain gating, rule-cascade labeling and evaluation for
multiplexed immunofluorescence nucleus/cell pipelines."""

from .bundle import SlideBundle, SlideManifest, TileRequest, read_bundle, write_bundle
from .cascade import (
    CellClass,
    RuleProgram,
    enumerate_outcomes,
    load_default_program,
    load_shipped_program,
    parse_rule_program,
    run_cascade,
)
from .stats import (
    InstanceStatsTable,
    PositivityMatrix,
    ThresholdSet,
    apply_thresholds,
    compute_stats,
)

__version__ = "0.1.0"

__all__ = [
    "SlideBundle", "SlideManifest", "TileRequest", "read_bundle", "write_bundle",
    "CellClass", "RuleProgram", "enumerate_outcomes", "load_default_program", "load_shipped_program",
    "parse_rule_program", "run_cascade",
    "InstanceStatsTable", "PositivityMatrix", "ThresholdSet",
    "apply_thresholds", "compute_stats",
]
