"""Time-triggered deployment toolchain for a multicore scratchpad vector processor.

Pipeline: load a quantized layer graph, fuse operators, tile each layer into
scratchpad-sized GEMM subtasks, map subtasks to cores for data reuse, cost
them, and serialize every external-memory transaction into an interference-free
static schedule whose makespan is the composed worst-case bound.  A
discrete-event simulator then checks that bound instead of assuming it.
"""

__version__ = "0.1.0"

from .errors import (
    InfeasibleBudgetError,
    ParseError,
    ScheduleFormatError,
    SpmOverflowError,
    TtschedError,
    ValidationError,
)
from .mapper import Mapping, cross_core_bytes, map_subtasks
from .model_ir import (
    GRAPH_INPUT,
    Layer,
    ModelGraph,
    TensorShape,
    execute_reference,
    fuse_operators,
    load_model,
    load_weights,
    model_from_dict,
)
from .partitioner import (
    DRAM_NODE,
    Edge,
    GemmDims,
    Subtask,
    SubtaskGraph,
    Tile,
    build_subtask_graph,
    lower_to_gemm,
    tile_layer,
)
from .scheduler import (
    ComputeEvent,
    Schedule,
    SpmRegion,
    TransferEvent,
    build_schedule,
    check_schedule,
    emit_schedule,
    load_schedule,
)
from .simulator import (
    ExecutionProfile,
    SimTrace,
    emit_gantt_csv,
    emit_trace,
    parse_profile,
    simulate,
    verify_against_prediction,
)
from .timing import (
    CostEstimate,
    HardwareConfig,
    apply_overrides,
    load_hw_config,
    load_wcet_overrides,
    transfer_cycles,
    wcet_subtask,
)
