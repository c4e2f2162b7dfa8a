"""Line-delimited JSON protocol: a banner line `{"protocol": 1}`, then one
response per request line, order-preserving, until EOF."""

from __future__ import annotations

import json
import sys

from .sandbox import execute_snippet

PROTOCOL_VERSION = 1

MIN_TIMEOUT_MS = 100
MAX_TIMEOUT_MS = 60000


def handle_request_line(line: str) -> dict:
    """One request line to one response dict; malformed lines come back as
    status=error with whatever id could be recovered."""
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": "", "status": "error", "value": None, "error_msg": f"bad request line: {exc}"}
    if not isinstance(req, dict):
        return {"id": "", "status": "error", "value": None, "error_msg": "request is not an object"}
    req_id = str(req.get("id", ""))
    table = req.get("table")
    code = req.get("code")
    if not isinstance(table, dict) or not isinstance(code, str):
        return {"id": req_id, "status": "error", "value": None,
                "error_msg": "request needs a table object and code text"}
    timeout_ms = req.get("timeout_ms", 5000)
    if not isinstance(timeout_ms, int):
        timeout_ms = 5000
    timeout_ms = min(max(timeout_ms, MIN_TIMEOUT_MS), MAX_TIMEOUT_MS)
    result = execute_snippet(table, code, timeout_ms)
    return {"id": req_id, **result}


def serve(stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    try:
        stdout.write(json.dumps({"protocol": PROTOCOL_VERSION}) + "\n")
        stdout.flush()
        for line in stdin:
            if not line.strip():
                continue
            response = handle_request_line(line)
            stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
            stdout.flush()
    except BrokenPipeError:
        return 1
    return 0


def main() -> None:
    sys.exit(serve())
