"""oracle-runner: sandboxed tabular-snippet execution over JSON lines."""

from .protocol import PROTOCOL_VERSION, handle_request_line, serve
from .sandbox import dataframe_from_grid, execute_snippet, to_json_value

__version__ = "0.1.0"

__all__ = [
    "PROTOCOL_VERSION",
    "dataframe_from_grid",
    "execute_snippet",
    "handle_request_line",
    "serve",
    "to_json_value",
]
