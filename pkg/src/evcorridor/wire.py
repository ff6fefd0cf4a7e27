"""Console wire protocol: one JSON object per WebSocket text message.

Message types: hello, scenario, snapshot, set_target, control, metrics,
bye, error. Unknown fields are ignored for forward compatibility; unknown
types or unparseable payloads are protocol errors the server answers with
an error message (the session stays up).
"""

from __future__ import annotations

import json

PROTOCOL_VERSION = 1

MESSAGE_TYPES = ("hello", "scenario", "snapshot", "set_target", "control",
                 "metrics", "bye", "error")

CONTROL_ACTIONS = ("start", "pause", "resume", "reset", "rate")


class WireError(ValueError):
    """Raised for malformed or unintelligible messages."""


def serialize(message: dict) -> str:
    if "type" not in message:
        raise WireError("message lacks a type")
    return json.dumps(message, separators=(",", ":"), sort_keys=True)


def parse(text: str) -> dict:
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WireError(f"not valid JSON: {exc}") from None
    if not isinstance(msg, dict):
        raise WireError("message must be a JSON object")
    mtype = msg.get("type")
    if mtype not in MESSAGE_TYPES:
        raise WireError(f"unknown message type {mtype!r}")
    if mtype == "set_target":
        if "g_star" not in msg and "c_star" not in msg:
            raise WireError("set_target needs g_star and/or c_star")
        for key in ("g_star", "c_star"):
            if key in msg and msg[key] is not None \
                    and not isinstance(msg[key], (int, float)):
                raise WireError(f"{key} must be a number")
    elif mtype == "control":
        action = msg.get("action")
        if action not in CONTROL_ACTIONS:
            raise WireError(f"unknown control action {action!r}")
        if action == "reset" and not isinstance(msg.get("seed"), int):
            raise WireError("reset needs an integer seed")
        if action == "rate":
            rate = msg.get("steps_per_s")
            if not isinstance(rate, (int, float)) or rate <= 0:
                raise WireError("rate needs steps_per_s > 0")
    return msg


def hello(role: str = "server") -> dict:
    return {"type": "hello", "version": PROTOCOL_VERSION, "role": role}


def error_reply(message: str) -> dict:
    return {"type": "error", "message": message}
