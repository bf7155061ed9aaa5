"""
Tests for the command-line interface.
"""
import json

import pytest

from bregman_rom.cli import build_parser, main
from bregman_rom.config import settings
from bregman_rom.services import experiment, persistence


def base_args(data_dir, out_dir):
    return ["--data-dir", str(data_dir), "--out-dir", str(out_dir)]


TRAIN_ARGS = ["--arch", "6,4,2,4,6", "--epochs", "2", "--batch-size", "8", "--eta", "4e-3", "--lambda", "0.05"]


@pytest.mark.unit
class TestParser:
    """Test argument parsing."""

    def test_command_required(self):
        """Test a subcommand must be given."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_pod_needs_rank_or_tol(self):
        """Test pod requires exactly one of --rank and --tol."""
        parser = build_parser()
        with pytest.raises(SystemExit):
            parser.parse_args(["pod", "--equation", "diffusion"])
        with pytest.raises(SystemExit):
            parser.parse_args(["pod", "--equation", "diffusion", "--rank", "3", "--tol", "1e-4"])

    def test_lambda_flag(self):
        """Test --lambda is stored as lam."""
        args = build_parser().parse_args(["train", "--lambda", "0.5"])
        assert args.lam == 0.5

    def test_list_arguments(self):
        """Test comma-separated lists are parsed."""
        args = build_parser().parse_args(["sweep", "--etas", "1e-3,4e-3", "--lambdas", "0.1,1", "--arch", "6,4,2,4,6"])
        assert args.etas == [1e-3, 4e-3]
        assert args.lambdas == [0.1, 1.0]
        assert args.arch == [6, 4, 2, 4, 6]

    def test_bad_list_argument(self):
        """Test malformed lists are rejected by the parser."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["sweep", "--etas", "1e-3,fast"])

    def test_generate_equation_choices(self):
        """Test unknown equations are rejected."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["generate", "--equation", "heat"])


@pytest.mark.integration
class TestCommands:
    """Test end-to-end command runs through main()."""

    def test_generate(self, tmp_path, capsys):
        """Test generate writes both snapshot files and the metrics file."""
        data_dir, out_dir = tmp_path / "data", tmp_path / "runs"
        assert main(base_args(data_dir, out_dir) + ["generate", "--equation", "diffusion"]) == 0
        train_path, test_path = experiment.data_paths(data_dir, "diffusion")
        assert persistence.load_snapshots(train_path).x.shape == (101, 753)
        assert test_path.exists()
        assert f"train: {train_path}" in capsys.readouterr().out
        assert (out_dir / settings.metrics_file).exists()

    def test_train_postprocess_evaluate(self, tmp_path, dataset_dir, capsys):
        """Test a model trained from the CLI can be compressed and evaluated."""
        out_dir = tmp_path / "runs"
        assert main(base_args(dataset_dir, out_dir) + ["train", "--equation", "diffusion", "--name", "tiny"] + TRAIN_ARGS) == 0
        out = capsys.readouterr().out
        model_file = experiment.model_path(out_dir, "tiny")
        assert f"model: {model_file}" in out
        assert experiment.metrics_path(out_dir, "tiny").exists()

        assert main(base_args(dataset_dir, out_dir)
                    + ["postprocess", "--model", str(model_file), "--equation", "diffusion"]) == 0
        post_file = experiment.postprocessed_model_path(model_file)
        assert f"model: {post_file}" in capsys.readouterr().out
        assert experiment.report_path(post_file).exists()

        assert main(base_args(dataset_dir, out_dir)
                    + ["evaluate", "--model", str(post_file), "--equation", "diffusion"]) == 0
        out = capsys.readouterr().out
        layer_line = next(line for line in out.splitlines() if line.startswith("layer_sizes: "))
        sizes = [int(d) for d in layer_line.split(": ")[1].split(",")]
        assert sizes[0] == 6 and sizes[-1] == 6

    def test_pod_with_explicit_files(self, tmp_path, dataset_dir, capsys):
        """Test pod accepts --train/--test paths."""
        train_path, test_path = experiment.data_paths(dataset_dir, "diffusion")
        argv = ["--out-dir", str(tmp_path / "runs"), "pod", "--train", str(train_path), "--test", str(test_path), "--rank", "2"]
        assert main(argv) == 0
        out = capsys.readouterr().out
        values = next(line for line in out.splitlines() if line.startswith("singular_values: "))
        assert len(values.split(": ")[1].split()) == 2

    def test_sweep(self, tmp_path, dataset_dir, capsys):
        """Test sweep writes one CSV row per grid point."""
        out_dir = tmp_path / "runs"
        argv = base_args(dataset_dir, out_dir) + [
            "sweep", "--equation", "diffusion", "--arch", "6,4,2,4,6", "--epochs", "1", "--batch-size", "8",
            "--etas", "1e-3,4e-3", "--lambdas", "0.05", "--name", "grid",
        ]
        assert main(argv) == 0
        out = capsys.readouterr().out
        assert "runs: 2, failed: 0" in out
        rows = persistence.read_sweep_csv(out_dir / "grid.sweep.csv")
        assert [row.eta for row in rows] == [1e-3, 4e-3]

    def test_config_file_with_overrides(self, tmp_path, dataset_dir, capsys):
        """Test flags override values read from --config."""
        config_file = tmp_path / "run.json"
        config_file.write_text(json.dumps({
            "equation": "diffusion", "arch": [6, 4, 2, 4, 6], "epochs": 5, "batch_size": 8,
            "eta": 4e-3, "lambda": 0.05, "name": "from_file",
        }))
        out_dir = tmp_path / "runs"
        argv = base_args(dataset_dir, out_dir) + ["--config", str(config_file), "train", "--epochs", "1"]
        assert main(argv) == 0
        metrics = persistence.read_metrics_csv(experiment.metrics_path(out_dir, "from_file"))
        assert metrics[-1].epoch == 1


@pytest.mark.integration
class TestErrors:
    """Test failures map to exit status 1."""

    def test_missing_dataset(self, tmp_path, capsys):
        """Test training without snapshot files fails cleanly."""
        argv = base_args(tmp_path / "empty", tmp_path / "runs") + ["train", "--equation", "diffusion"] + TRAIN_ARGS
        assert main(argv) == 1
        assert "error:" in capsys.readouterr().err
        assert (tmp_path / "runs" / settings.metrics_file).exists()

    def test_missing_model(self, tmp_path, dataset_dir, capsys):
        """Test evaluating a missing model file fails cleanly."""
        argv = base_args(dataset_dir, tmp_path / "runs") + [
            "evaluate", "--model", str(tmp_path / "absent.model.json"), "--equation", "diffusion",
        ]
        assert main(argv) == 1
        assert "error:" in capsys.readouterr().err

    def test_invalid_config_file(self, tmp_path, capsys):
        """Test an unreadable config file fails cleanly."""
        config_file = tmp_path / "broken.json"
        config_file.write_text("{not json")
        argv = ["--out-dir", str(tmp_path / "runs"), "--config", str(config_file), "train"]
        assert main(argv) == 1
        assert "Cannot read config file" in capsys.readouterr().err

    def test_invalid_value(self, tmp_path, dataset_dir, capsys):
        """Test validation errors in flags fail cleanly."""
        argv = base_args(dataset_dir, tmp_path / "runs") + ["train", "--equation", "diffusion", "--eta", "-1"]
        assert main(argv) == 1
        assert "eta must be positive" in capsys.readouterr().err

    def test_snapshot_source_required(self, tmp_path, capsys):
        """Test pod without --train, --equation or --config is rejected."""
        assert main(["--out-dir", str(tmp_path / "runs"), "pod", "--rank", "2"]) == 1
        assert "--train" in capsys.readouterr().err

    def test_divergence(self, tmp_path, dataset_dir, capsys):
        """Test a diverging run exits with status 1."""
        argv = base_args(dataset_dir, tmp_path / "runs") + [
            "train", "--equation", "diffusion", "--optimizer", "sgd", "--eta", "1e10",
            "--arch", "6,4,2,4,6", "--epochs", "3", "--batch-size", "8",
        ]
        assert main(argv) == 1
        assert "error:" in capsys.readouterr().err
