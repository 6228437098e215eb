"""Process event graphs from Sysmon logs, with an actor-critic walker.

The pipeline: parse logs (:mod:`eventgraph.ingest`), aggregate them into a
weighted directed graph (:mod:`eventgraph.graph`), measure its structure
(:mod:`eventgraph.metrics`), walk it as an episodic environment
(:mod:`eventgraph.env`), and train a graph-convolutional actor-critic on it
(:mod:`eventgraph.agent`, :mod:`eventgraph.harness`).
"""

from .agent import (
    AgentConfig,
    AgentParams,
    ForwardCache,
    LossBreakdown,
    OptimizerState,
    TransitionSample,
    adam_step,
    backward,
    build_adjacency,
    compute_losses,
    forward,
    init_optimizer,
    init_params,
    load_checkpoint,
    n_step_returns,
    sample_action,
    save_checkpoint,
)
from .env import (
    EnvConfig,
    EpisodeState,
    GraphEnv,
    RewardConfig,
    StepResult,
    baseline_reward,
    refined_reward,
)
from .errors import (
    BudgetError,
    ConfigError,
    EventGraphError,
    GraphParseError,
    IngestError,
    SizingError,
    UsageError,
)
from .graph import (
    CausalEdge,
    EncoderConfig,
    EventGraph,
    GraphSnapshot,
    ProcessNode,
    build_graph,
    derive_label,
    encode_features,
    export_graph,
    import_graph,
    prune_isolated,
    snapshot,
)
from .harness import (
    RunReport,
    SweepGrid,
    TrainConfig,
    WorkerStats,
    aggregate_worker_metrics,
    emit_run_report,
    run_sweep,
    run_training,
)
from .ingest import (
    EventKind,
    IntegrityLevel,
    ParentChildRelation,
    RejectReport,
    RelationSummary,
    SysmonEvent,
    extract_relations,
    normalize_integrity,
    parse_sysmon_records,
    serialize_events,
)
from .metrics import (
    MetricsReport,
    avg_degree_connectivity,
    clustering_coefficient,
    edge_density,
    in_degree_centrality,
    longest_path_via_condensation,
    metrics_report,
    strongly_connected_components,
)

__version__ = "0.1.0"
