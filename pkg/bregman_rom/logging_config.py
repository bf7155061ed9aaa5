"""
Structured logging: structlog events rendered by python-json-logger on stderr.

stdout carries the command summaries only, so every log line goes to stderr.
In JSON mode each structlog event becomes one JSON object whose top-level keys
are the event fields; the console mode renders ``key=value`` lines.
"""
import logging
import sys
from typing import Any, ContextManager

import numpy as np
import structlog
from pythonjsonlogger import jsonlogger

JSON_FORMAT = "%(levelname)s %(name)s %(message)s"


def _numpy_to_builtin(logger: Any, method_name: str, event_dict: dict) -> dict:
    """Turn numpy scalars and arrays into plain Python values."""
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
        elif isinstance(value, np.ndarray):
            event_dict[key] = value.tolist()
    return event_dict


def _stderr_handler(json_logs: bool) -> logging.Handler:
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(jsonlogger.JsonFormatter(
            JSON_FORMAT,
            rename_fields={"message": "event", "levelname": "level", "name": "logger"},
            timestamp=True,
        ))
    else:
        handler.setFormatter(logging.Formatter("%(message)s"))
    return handler


def setup_logging(debug: bool = False, json_logs: bool = True) -> None:
    """
    Configure structlog and the stdlib root logger.

    Args:
        debug: Emit per-epoch debug events
        json_logs: One JSON object per line (otherwise key=value console lines)
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG if debug else logging.INFO)
    root_logger.handlers = [_stderr_handler(json_logs)]

    processors = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.filter_by_level,
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        _numpy_to_builtin,
    ]
    if json_logs:
        # level, logger name and timestamp come from the JSON formatter
        processors.append(structlog.stdlib.render_to_log_kwargs)
    else:
        processors += [
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=False),
        ]

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def get_logger(name: str) -> Any:
    return structlog.get_logger(name)


def run_context(**fields: Any) -> ContextManager:
    """Bind run identifiers (equation, optimizer, seed, eta, lambda) to every event logged inside the block."""
    return structlog.contextvars.bound_contextvars(**fields)
