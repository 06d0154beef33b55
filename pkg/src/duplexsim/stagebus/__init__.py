"""Pluggable stage bus: wire protocol, deterministic mock stages, and the
discrete-event simulator that drives a full-duplex session through them."""

from .wire import (  # noqa: F401
    MESSAGE_TYPES,
    PROTOCOL_VERSION,
    WireMessage,
    decode_message,
    encode_message,
    feature_floats,
    mix64,
    fnv1a64,
    speech_token_ids,
    stage_hash,
    text_token_ids,
)
from .stages import (  # noqa: F401
    MockStageResponder,
    ProcessTransport,
    StageChannel,
    TcpTransport,
    serve_lines,
)
from .engine import (  # noqa: F401
    Endpoint,
    PredictorConfig,
    Scenario,
    StageDescriptor,
    StageRole,
    TurnPlan,
    VirtualClock,
    default_stages,
    load_scenario,
    run_simulation,
    save_scenario,
)
