from .session import (
    TRACE_COLUMNS,
    Emission,
    SessionState,
    StreamSession,
    TracePoint,
    latency_ratio,
    open_session,
    stream_event,
    write_trace,
)

__all__ = [
    "TRACE_COLUMNS",
    "Emission",
    "SessionState",
    "StreamSession",
    "TracePoint",
    "latency_ratio",
    "open_session",
    "stream_event",
    "write_trace",
]
