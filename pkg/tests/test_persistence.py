"""
Tests for snapshot, model and table files.
"""
import json
import math
import struct

import numpy as np
import pytest

from bregman_rom.exceptions import ModelFormatError, NonFiniteError, SnapshotFormatError
from bregman_rom.models import METRICS_COLUMNS, MetricsRecord, PostprocReport, SweepRow
from bregman_rom.services.persistence import (
    MODEL_FORMAT,
    decode_snapshots,
    encode_snapshots,
    load_model,
    load_snapshots,
    model_from_json,
    model_to_json,
    read_metrics_csv,
    read_sweep_csv,
    save_model,
    save_report,
    save_snapshots,
    sidecar_path,
    write_metrics_csv,
    write_sweep_csv,
)


def record(epoch, loss, diverged=False):
    return MetricsRecord(
        epoch=epoch,
        train_loss=math.nan if diverged else loss,
        test_loss=math.nan if diverged else 2 * loss,
        reg_value=math.nan if diverged else 0.5,
        weight_density=0.25,
        nonzero_weights=12,
        effective_latent_dim=2,
        diverged=diverged,
    )


@pytest.mark.unit
class TestSnapshotFiles:
    """Test the SNP1 snapshot format."""

    def test_layout(self):
        """Test header fields and column-major payload order."""
        x = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        data = encode_snapshots(x)
        assert data[:4] == b"SNP1"
        assert struct.unpack_from("<II", data, 4) == (2, 3)
        assert len(data) == 12 + 8 * 6
        assert struct.unpack_from("<3d", data, 12) == (1.0, 4.0, 2.0)

    def test_save_and_load(self, tmp_path, snapshot_pair):
        """Test snapshots and metadata survive a save/load cycle bitwise."""
        train_set, _ = snapshot_pair
        path = save_snapshots(train_set, tmp_path / "d" / "train.snp")
        assert sidecar_path(path).name == "train.snp.json"
        loaded = load_snapshots(path)
        np.testing.assert_array_equal(loaded.x, train_set.x)
        np.testing.assert_array_equal(loaded.mu, train_set.mu)
        np.testing.assert_array_equal(loaded.times, train_set.times)
        assert loaded.equation == "diffusion"
        assert loaded.dx == train_set.dx

    @pytest.mark.parametrize("mutate,field", [
        (lambda d: d[:10], "header"),
        (lambda d: b"XXXX" + d[4:], "magic"),
        (lambda d: d[:-8], "data"),
        (lambda d: d + b"\0", "trailing"),
    ])
    def test_corrupt_bytes(self, mutate, field):
        """Test corrupt files report the failing field."""
        data = encode_snapshots(np.ones((2, 2)))
        with pytest.raises(SnapshotFormatError) as exc_info:
            decode_snapshots(mutate(data), path="x.snp")
        assert exc_info.value.field == field
        assert exc_info.value.path == "x.snp"

    def test_non_finite_offset(self):
        """Test a NaN entry is reported at its byte offset."""
        x = np.ones((2, 2))
        x[1, 1] = np.nan
        with pytest.raises(SnapshotFormatError) as exc_info:
            decode_snapshots(encode_snapshots(x))
        assert exc_info.value.offset == 12 + 8 * 3

    def test_empty_matrix(self):
        """Test zero rows are rejected."""
        with pytest.raises(SnapshotFormatError):
            decode_snapshots(struct.pack("<4sII", b"SNP1", 0, 3))

    def test_missing_sidecar(self, tmp_path, snapshot_pair):
        """Test a matrix without sidecar is rejected."""
        path = save_snapshots(snapshot_pair[0], tmp_path / "train.snp")
        sidecar_path(path).unlink()
        with pytest.raises(SnapshotFormatError) as exc_info:
            load_snapshots(path)
        assert exc_info.value.field == "sidecar"

    def test_sidecar_shape_mismatch(self, tmp_path, snapshot_pair):
        """Test a sidecar describing another shape is rejected."""
        path = save_snapshots(snapshot_pair[0], tmp_path / "train.snp")
        meta = json.loads(sidecar_path(path).read_text())
        meta["cols"] = 3
        sidecar_path(path).write_text(json.dumps(meta))
        with pytest.raises(SnapshotFormatError):
            load_snapshots(path)

    def test_sidecar_schema(self, tmp_path, snapshot_pair):
        """Test a sidecar missing a field names that field."""
        path = save_snapshots(snapshot_pair[0], tmp_path / "train.snp")
        meta = json.loads(sidecar_path(path).read_text())
        del meta["dx"]
        sidecar_path(path).write_text(json.dumps(meta))
        with pytest.raises(SnapshotFormatError) as exc_info:
            load_snapshots(path)
        assert exc_info.value.field == "dx"


@pytest.mark.unit
class TestModelFiles:
    """Test model JSON documents."""

    def test_round_trip_is_bitwise(self, tmp_path, random_model):
        """Test parameters and metadata reload exactly."""
        model = random_model()
        model.metadata = {"seed": 3, "optimizer": "adabreg"}
        path = save_model(model, tmp_path / "m.json")
        loaded = load_model(path)
        assert loaded.layer_sizes == model.layer_sizes
        assert loaded.l_enc == model.l_enc
        assert loaded.metadata == model.metadata
        for a, b in zip(loaded.params().arrays(), model.params().arrays()):
            np.testing.assert_array_equal(a, b)

    def test_document_layout(self, small_model):
        """Test the top-level keys and format tag."""
        doc = json.loads(model_to_json(small_model))
        assert doc["format"] == MODEL_FORMAT
        assert doc["layer_sizes"] == [6, 4, 2, 4, 6]
        assert len(doc["weights"][0]) == 4
        assert len(doc["weights"][0][0]) == 6

    def test_non_finite_not_saved(self, small_model):
        """Test NaN parameters cannot be saved."""
        small_model.weights[0][0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            model_to_json(small_model)

    def test_malformed_json_offset(self):
        """Test JSON syntax errors carry the byte offset."""
        with pytest.raises(ModelFormatError) as exc_info:
            model_from_json('{"é": 1,,}')
        assert exc_info.value.offset == 9

    def test_missing_field(self, small_model):
        """Test schema errors name the field."""
        doc = json.loads(model_to_json(small_model))
        del doc["l_enc"]
        with pytest.raises(ModelFormatError) as exc_info:
            model_from_json(json.dumps(doc))
        assert exc_info.value.field == "l_enc"

    def test_unknown_format(self, small_model):
        """Test other format tags are rejected."""
        doc = json.loads(model_to_json(small_model))
        doc["format"] = "other/2"
        with pytest.raises(ModelFormatError) as exc_info:
            model_from_json(json.dumps(doc))
        assert exc_info.value.field == "format"

    def test_weight_shape(self, small_model):
        """Test weights that disagree with layer_sizes are rejected."""
        doc = json.loads(model_to_json(small_model))
        doc["weights"][1] = doc["weights"][1][:1]
        with pytest.raises(ModelFormatError) as exc_info:
            model_from_json(json.dumps(doc))
        assert exc_info.value.field == "weights.1"

    def test_invalid_l_enc(self, small_model):
        """Test an out-of-range l_enc is rejected."""
        doc = json.loads(model_to_json(small_model))
        doc["l_enc"] = 9
        with pytest.raises(ModelFormatError):
            model_from_json(json.dumps(doc))


@pytest.mark.unit
class TestTables:
    """Test CSV tables and reports."""

    def test_metrics_csv(self, tmp_path):
        """Test the header and values survive a write/read cycle."""
        path = write_metrics_csv([record(1, 0.1), record(2, 0.05), record(3, 0.0, diverged=True)],
                                 tmp_path / "m.csv")
        assert path.read_text().splitlines()[0] == ",".join(METRICS_COLUMNS)
        rows = read_metrics_csv(path)
        assert [r.epoch for r in rows] == [1, 2, 3]
        assert rows[1].test_loss == 0.1
        assert rows[0].diverged is False
        assert rows[2].diverged is True

    def test_metrics_csv_is_reproducible(self, tmp_path):
        """Test identical records produce identical bytes."""
        a = write_metrics_csv([record(1, 1.0 / 3.0)], tmp_path / "a.csv")
        b = write_metrics_csv([record(1, 1.0 / 3.0)], tmp_path / "b.csv")
        assert a.read_bytes() == b.read_bytes()

    def test_sweep_csv(self, tmp_path):
        """Test optional cells and flags survive a write/read cycle."""
        rows = [
            SweepRow(eta=1e-3, lam=0.1, seed=0, status="ok", epochs_completed=5, test_loss=0.25,
                     nonzero_weights=40, best=True),
            SweepRow(eta=1e-2, lam=0.1, seed=0, status="diverged", error="non-finite loss"),
        ]
        loaded = read_sweep_csv(write_sweep_csv(rows, tmp_path / "s.csv"))
        assert loaded == rows

    def test_save_report(self, tmp_path):
        """Test reports are written as JSON."""
        report = PostprocReport(
            c_tol=0.01, eps_used=1e-6, lipschitz_estimate=2.0, lipschitz_method="jacobian",
            lipschitz_upper_bound=3.0, lipschitz_jacobian=2.0, latent_dim_before=5, latent_dim_after=3,
            params_before=100, params_after=80, train_loss_before=1e-3, train_loss_after=1.001e-3,
        )
        path = save_report(report, tmp_path / "r.json")
        assert json.loads(path.read_text())["latent_dim_after"] == 3
