"""
Monitoring and metrics collection using Prometheus.

Metrics live in a dedicated registry and are written to a text file at the end
of each command; nothing is served over the network.
"""
import functools
import time
from pathlib import Path
from typing import Callable, Optional

from prometheus_client import CollectorRegistry, Counter, Histogram, generate_latest

from bregman_rom.utils import atomic_write

REGISTRY = CollectorRegistry()

training_runs_total = Counter(
    'training_runs_total',
    'Total number of training runs',
    ['optimizer', 'status'],
    registry=REGISTRY,
)

optimizer_steps_total = Counter(
    'optimizer_steps_total',
    'Total number of optimizer steps taken',
    ['optimizer'],
    registry=REGISTRY,
)

epoch_duration = Histogram(
    'epoch_duration_seconds',
    'Time spent per training epoch',
    ['optimizer'],
    registry=REGISTRY,
)

postprocess_runs_total = Counter(
    'postprocess_runs_total',
    'Total number of post-processing runs',
    ['status'],
    registry=REGISTRY,
)

sweep_runs_total = Counter(
    'sweep_runs_total',
    'Total number of sweep runs',
    ['status'],
    registry=REGISTRY,
)

command_duration = Histogram(
    'command_duration_seconds',
    'Duration of CLI commands',
    ['command'],
    registry=REGISTRY,
)

errors_total = Counter(
    'errors_total',
    'Total number of errors by type',
    ['error_type', 'component'],
    registry=REGISTRY,
)


def track_time(metric: Histogram, labels: Optional[dict] = None):
    """
    Decorator to track execution time of a function.

    Args:
        metric: Prometheus Histogram metric
        labels: Optional labels for the metric
    """
    def decorator(func: Callable):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                duration = time.perf_counter() - start_time
                if labels:
                    metric.labels(**labels).observe(duration)
                else:
                    metric.observe(duration)
        return wrapper
    return decorator


def record_error(error_type: str, component: str) -> None:
    """
    Record an error occurrence.

    Args:
        error_type: Type of error (e.g., 'TrainingDivergedError')
        component: Component where error occurred (e.g., 'optim')
    """
    errors_total.labels(error_type=error_type, component=component).inc()


def get_metrics() -> bytes:
    """Current metrics in Prometheus text format."""
    return generate_latest(REGISTRY)


def write_metrics(path: Path) -> None:
    """Write the current exposition text to ``path``, replacing it atomically."""
    atomic_write(path, get_metrics())
