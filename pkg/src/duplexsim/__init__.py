"""duplexsim: full-duplex voice interaction orchestration at desk scale.

A streaming decode scheduler, a duplex turn-taking state machine, corpus
annotation heuristics, a discrete-event latency simulator with pluggable
stages, and the matching evaluation metrics.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    Channel,
    ChunkGrid,
    ControlMarker,
    DialogueTimeline,
    DuplexError,
    DuplexLabels,
    EventKind,
    LatencyProfile,
    MarkerKind,
    RatioPolicy,
    SemanticVector,
    SpeechSegment,
    SpeechToken,
    TraceEvent,
    ValidationError,
    time_to_chunk,
    validate_timeline,
)
from .interleave import (  # noqa: F401
    EmitterState,
    SemanticBatch,
    SpeechFeed,
    TextDone,
    assemble_projector_input,
    build_interleaved_sequence,
    emitter_next,
    experiential_latency,
    new_emitter,
    theoretical_latency,
)
from .duplex import (  # noqa: F401
    DecisionKind,
    DuplexDecision,
    Mode,
    PredictorContext,
    SessionState,
    ThresholdParams,
    scripted_predictor,
    session_tick,
    threshold_predictor,
)
from .annotate import (  # noqa: F401
    GapDistribution,
    GapSampler,
    annotate_timeline,
    detect_backchannels,
    to_chatml,
)
from .metrics import (  # noqa: F401
    EvalReport,
    OnsetPredictions,
    Task,
    backchannel_accuracy,
    evaluate_trace,
    latency_decomposition_report,
    positive_f1_at_offset_k,
    response_latency_stats,
)
from .stagebus import (  # noqa: F401
    Scenario,
    StageDescriptor,
    StageRole,
    TurnPlan,
    run_simulation,
)
from .scenarios import generate_scenario  # noqa: F401
