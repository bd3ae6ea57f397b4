"""Grid construction, dispatch and two-stage selection."""
from .grid import (
    PARAM_NAMES, STAGE_VALUES, TOP_VALUES, ParameterGrid, ScheduleEntry, build_grid,
    order_correlations, params_key, schedule,
)
from .local import run_local
from .selection import (
    DEFAULT_QUORUM, AggregateScore, AggregationError, Shortlist, TrialAssignment, TrialReport,
    aggregate, stage1_select, stage2_select, threshold,
)
from .server import StudyRecord, StudyServer, assignment_config, client_run, execute, serve
from .study import Study, StudyError, read_log, slot_seeds

__all__ = [
    "PARAM_NAMES", "STAGE_VALUES", "TOP_VALUES", "ParameterGrid", "ScheduleEntry", "build_grid",
    "order_correlations", "params_key", "schedule", "run_local", "DEFAULT_QUORUM",
    "AggregateScore", "AggregationError", "Shortlist", "TrialAssignment", "TrialReport",
    "aggregate", "stage1_select", "stage2_select", "threshold", "StudyRecord", "StudyServer",
    "assignment_config", "client_run", "execute", "serve", "Study", "StudyError", "read_log",
    "slot_seeds",
]
