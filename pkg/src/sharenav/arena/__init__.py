"""Live session hosting: tick loop, records, replay, wire service, CLI."""

from .session import (
    KEY_DOWN,
    KEY_LEFT,
    KEY_RIGHT,
    KEY_UP,
    METHODS,
    RECORD_VERSION,
    ReplayError,
    ReplayResult,
    Session,
    SessionError,
    append_record,
    bitmask_to_command,
    count_key_downs,
    make_controller,
    read_records,
    replay,
    scene_from_json,
    validate_event,
)

__all__ = [
    "KEY_DOWN",
    "KEY_LEFT",
    "KEY_RIGHT",
    "KEY_UP",
    "METHODS",
    "RECORD_VERSION",
    "ReplayError",
    "ReplayResult",
    "Session",
    "SessionError",
    "append_record",
    "bitmask_to_command",
    "count_key_downs",
    "make_controller",
    "read_records",
    "replay",
    "scene_from_json",
    "validate_event",
]
