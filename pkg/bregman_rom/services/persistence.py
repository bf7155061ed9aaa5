"""
Artifact files.

- Snapshots: "SNP1" magic, little-endian u32 rows and cols, then rows*cols
  float64 values in column-major order; metadata in a JSON sidecar
  (``<file>.json``).
- Models: UTF-8 JSON with layer sizes, l_enc, row-major weight arrays, bias
  arrays and run metadata. Floats are written in shortest round-trip form.
- Metrics and sweeps: CSV with a fixed header.

All writes go through a temporary file and an atomic rename.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from bregman_rom.exceptions import ModelFormatError, NonFiniteError, ShapeMismatchError, SnapshotFormatError
from bregman_rom.logging_config import get_logger
from bregman_rom.models import METRICS_COLUMNS, SWEEP_COLUMNS, MetricsRecord, SweepRow
from bregman_rom.services.autoencoder import MlpAutoencoder
from bregman_rom.services.pde_data import SnapshotSet
from bregman_rom.utils import atomic_write

logger = get_logger(__name__)

SNAPSHOT_MAGIC = b"SNP1"
SNAPSHOT_HEADER = struct.Struct("<4sII")
MODEL_FORMAT = "bregman_rom.model/1"

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


class SnapshotMetadata(BaseModel):
    """Sidecar schema."""
    model_config = ConfigDict(extra="forbid")

    equation: str
    split: str
    rows: int
    cols: int
    grid: List[float]
    dx: float
    dt: float
    stride: int
    mu: List[float]
    times: List[float]
    extra: Dict[str, Any] = {}


class ModelFile(BaseModel):
    """Model JSON schema."""
    format: str
    layer_sizes: List[int]
    l_enc: int
    weights: List[List[List[float]]]
    biases: List[List[float]]
    metadata: Dict[str, Any] = {}


def _error_field(exc: ValidationError) -> Optional[str]:
    loc = exc.errors()[0].get("loc", ())
    return ".".join(str(part) for part in loc) or None


# ----------------------------------------------------------------------------
# Snapshots
# ----------------------------------------------------------------------------

def encode_snapshots(x: np.ndarray) -> bytes:
    """SNP1 bytes of a snapshot matrix."""
    x = np.asarray(x, dtype=np.float64)
    rows, cols = x.shape
    return SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, rows, cols) + x.astype("<f8").tobytes(order="F")


def decode_snapshots(data: bytes, path: Optional[str] = None) -> np.ndarray:
    """
    Parse SNP1 bytes.

    Raises:
        SnapshotFormatError: bad magic, truncated or oversized payload, non-finite values
    """
    if len(data) < SNAPSHOT_HEADER.size:
        raise SnapshotFormatError("file shorter than the header", path=path, offset=len(data), field="header")
    magic, rows, cols = SNAPSHOT_HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}", path=path, offset=0, field="magic")
    if rows == 0 or cols == 0:
        raise SnapshotFormatError("empty snapshot matrix", path=path, offset=4, field="rows" if rows == 0 else "cols")
    expected = SNAPSHOT_HEADER.size + 8 * rows * cols
    if len(data) != expected:
        field = "data" if len(data) < expected else "trailing"
        raise SnapshotFormatError(f"expected {expected} bytes, found {len(data)}", path=path,
                                  offset=min(len(data), expected), field=field)
    flat = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=SNAPSHOT_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise SnapshotFormatError("non-finite snapshot value", path=path,
                                  offset=SNAPSHOT_HEADER.size + 8 * int(bad[0]), field="data")
    return flat.astype(np.float64).reshape((rows, cols), order="F")


def save_snapshots(snapshots: SnapshotSet, path: PathLike) -> Path:
    """Write the SNP1 matrix and its JSON sidecar."""
    path = Path(path)
    atomic_write(path, encode_snapshots(snapshots.x))
    atomic_write(sidecar_path(path), json.dumps(snapshots.metadata(), indent=2, sort_keys=True) + "\n")
    logger.info("snapshots_saved", path=str(path), rows=snapshots.x.shape[0], cols=snapshots.x.shape[1],
                split=snapshots.split)
    return path


def load_snapshots(path: PathLike) -> SnapshotSet:
    """
    Read a snapshot file and its sidecar.

    Raises:
        SnapshotFormatError: corrupt matrix or sidecar, or the two disagree
    """
    path = Path(path)
    x = decode_snapshots(path.read_bytes(), path=str(path))
    side = sidecar_path(path)
    try:
        text = side.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise SnapshotFormatError("missing metadata sidecar", path=str(side), field="sidecar") from exc
    try:
        meta = SnapshotMetadata.model_validate_json(text)
    except ValidationError as exc:
        raise SnapshotFormatError(f"invalid sidecar: {exc.errors()[0]['msg']}", path=str(side),
                                  field=_error_field(exc)) from exc
    if (meta.rows, meta.cols) != x.shape:
        raise SnapshotFormatError(f"sidecar shape {(meta.rows, meta.cols)} does not match matrix {x.shape}",
                                  path=str(side), field="rows")
    if len(meta.mu) != meta.cols or len(meta.times) != meta.cols:
        raise SnapshotFormatError("sidecar needs one mu and time per column", path=str(side), field="mu")
    return SnapshotSet(
        equation=meta.equation,
        split=meta.split,
        x=x,
        grid=np.array(meta.grid),
        dx=meta.dx,
        dt=meta.dt,
        stride=meta.stride,
        mu=np.array(meta.mu),
        times=np.array(meta.times),
        extra=meta.extra,
    )


# ----------------------------------------------------------------------------
# Models
# ----------------------------------------------------------------------------

def model_to_json(model: MlpAutoencoder) -> str:
    """Serialize parameters and metadata; floats keep full 64-bit precision."""
    for layer, arr in enumerate(model.weights + model.biases):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"cannot save non-finite parameters (block {layer})")
    payload = {
        "format": MODEL_FORMAT,
        "layer_sizes": list(model.layer_sizes),
        "l_enc": model.l_enc,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "metadata": model.metadata,
    }
    return json.dumps(payload, sort_keys=True, allow_nan=False) + "\n"


def model_from_json(text: str, path: Optional[str] = None) -> MlpAutoencoder:
    """
    Parse a model document.

    Raises:
        ModelFormatError: malformed JSON (with byte offset), schema violations
            (with field name) or inconsistent shapes
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise ModelFormatError(f"malformed JSON: {exc.msg}", path=path, offset=offset) from exc
    try:
        doc = ModelFile.model_validate(raw)
    except ValidationError as exc:
        raise ModelFormatError(f"invalid model: {exc.errors()[0]['msg']}", path=path,
                               field=_error_field(exc)) from exc
    if doc.format != MODEL_FORMAT:
        raise ModelFormatError(f"unsupported format {doc.format!r}", path=path, field="format")
    if len(doc.weights) != len(doc.layer_sizes) - 1 or len(doc.biases) != len(doc.weights):
        raise ModelFormatError("layer count does not match layer_sizes", path=path, field="layer_sizes")

    weights, biases = [], []
    for idx, (w_rows, b_vals) in enumerate(zip(doc.weights, doc.biases)):
        d_in, d_out = doc.layer_sizes[idx], doc.layer_sizes[idx + 1]
        if len(w_rows) != d_out or any(len(row) != d_in for row in w_rows):
            raise ModelFormatError(f"weights of layer {idx + 1} are not {d_out}x{d_in}", path=path,
                                   field=f"weights.{idx}")
        if len(b_vals) != d_out:
            raise ModelFormatError(f"bias of layer {idx + 1} has length {len(b_vals)}, expected {d_out}",
                                   path=path, field=f"biases.{idx}")
        w = np.array(w_rows, dtype=np.float64).reshape(d_out, d_in)
        b = np.array(b_vals, dtype=np.float64)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelFormatError(f"non-finite parameters in layer {idx + 1}", path=path, field=f"weights.{idx}")
        weights.append(w)
        biases.append(b)
    try:
        return MlpAutoencoder(weights, biases, doc.l_enc, dict(doc.metadata))
    except (ShapeMismatchError, ValueError) as exc:
        raise ModelFormatError(f"inconsistent model: {exc}", path=path, field="l_enc") from exc


def save_model(model: MlpAutoencoder, path: PathLike) -> Path:
    path = Path(path)
    atomic_write(path, model_to_json(model))
    logger.info("model_saved", path=str(path), layer_sizes=list(model.layer_sizes))
    return path


def load_model(path: PathLike) -> MlpAutoencoder:
    path = Path(path)
    return model_from_json(path.read_text(encoding="utf-8"), path=str(path))


# ----------------------------------------------------------------------------
# Tables and reports
# ----------------------------------------------------------------------------

def _csv_text(header: Iterable[str], rows: Iterable[List[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_metrics_csv(records: Iterable[MetricsRecord], path: PathLike) -> Path:
    """One row per epoch under the fixed METRICS_COLUMNS header."""
    return atomic_write(path, _csv_text(METRICS_COLUMNS, (r.csv_row() for r in records)))


def read_metrics_csv(path: PathLike) -> List[MetricsRecord]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        return [
            MetricsRecord(
                epoch=int(row["epoch"]),
                train_loss=float(row["train_loss"]),
                test_loss=float(row["test_loss"]),
                reg_value=float(row["reg_value"]),
                weight_density=float(row["weight_density"]),
                nonzero_weights=int(row["nonzero_weights"]),
                effective_latent_dim=int(row["latent_dim"]),
                wall_time_s=float(row["wall_time_s"]),
                diverged=row["train_loss"] == "nan",
            )
            for row in reader
        ]


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_sweep_csv(rows: Iterable[SweepRow], path: PathLike) -> Path:
    body = ([_cell(getattr(row, column)) for column in SWEEP_COLUMNS] for row in rows)
    return atomic_write(path, _csv_text(SWEEP_COLUMNS, body))


def read_sweep_csv(path: PathLike) -> List[SweepRow]:
    """Parse a sweep table; empty cells become None."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        return [SweepRow.model_validate({k: (v if v != "" else None) for k, v in row.items()}) for row in reader]


def save_report(report: BaseModel, path: PathLike) -> Path:
    return atomic_write(path, report.model_dump_json(indent=2) + "\n")
