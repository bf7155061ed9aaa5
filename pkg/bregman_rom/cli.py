"""
Command-line interface.

Subcommands: generate, train, postprocess, evaluate, pod, sweep.
Summaries go to stdout; structured logs go to stderr.
Exit status is 1 for any library error.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from bregman_rom.config import ExperimentConfig, load_experiment_config, settings
from bregman_rom.exceptions import BregmanRomError, ConfigurationError
from bregman_rom.logging_config import get_logger, setup_logging
from bregman_rom.models import Equation, OptimizerKind
from bregman_rom.monitoring import record_error, write_metrics
from bregman_rom.services import experiment
from bregman_rom.utils import format_float

logger = get_logger(__name__)


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--equation", choices=[e.value for e in Equation])
    parser.add_argument("--optimizer", choices=[o.value for o in OptimizerKind])
    parser.add_argument("--eta", type=float, help="learning rate")
    parser.add_argument("--lambda", dest="lam", type=float, help="regularization constant")
    parser.add_argument("--init-density", type=float, help="fraction of nonzero rows at initialization")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--seeds", type=int, help="train N consecutive seeds and keep the best")
    parser.add_argument("--arch", type=_int_list, help="comma-separated layer sizes")
    parser.add_argument("--l-enc", type=int, help="1-based index of the latent layer")
    parser.add_argument("--c-tol", type=float, help="latent truncation tolerance")
    parser.add_argument("--name", help="artifact name stem")


def _add_data_options(parser: argparse.ArgumentParser, model: bool = True) -> None:
    if model:
        parser.add_argument("--model", type=Path, required=True, help="model JSON file")
    parser.add_argument("--equation", choices=[e.value for e in Equation],
                        help="locate the snapshot files of this dataset in the data directory")
    parser.add_argument("--train", type=Path, help="training snapshot file")
    parser.add_argument("--test", type=Path, help="test snapshot file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bregman-rom",
        description="Sparse autoencoders for PDE snapshots trained with linearized Bregman iterations.",
    )
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--config", type=Path, help="flat JSON experiment configuration")
    parser.add_argument("--out-dir", type=Path, help="directory for models, metrics and reports")
    parser.add_argument("--data-dir", type=Path, help="directory holding snapshot files")
    parser.add_argument("--threads", type=int, help="concurrent sweep runs")
    parser.add_argument("--debug", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate train/test snapshot files")
    gen.add_argument("--equation", required=True, choices=[e.value for e in Equation])
    gen.add_argument("--grid", type=int, help="reaction-diffusion grid points per axis")

    train = sub.add_parser("train", help="train an autoencoder")
    _add_run_options(train)

    post = sub.add_parser("postprocess", help="latent truncated SVD and bias propagation")
    _add_data_options(post)
    post.add_argument("--c-tol", type=float, help="latent truncation tolerance")
    post.add_argument("--output", type=Path, help="compressed model file")

    evaluate = sub.add_parser("evaluate", help="losses and size of a stored model")
    _add_data_options(evaluate)

    pod = sub.add_parser("pod", help="POD baseline")
    _add_data_options(pod, model=False)
    size = pod.add_mutually_exclusive_group(required=True)
    size.add_argument("--rank", type=int, help="number of modes")
    size.add_argument("--tol", type=float, help="relative reconstruction loss target")

    sweep = sub.add_parser("sweep", help="grid sweep over learning rates and regularization constants")
    _add_run_options(sweep)
    sweep.add_argument("--etas", type=_float_list, required=True, help="comma-separated learning rates")
    sweep.add_argument("--lambdas", type=_float_list, default=[], help="comma-separated regularization constants")

    return parser


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: Dict[str, Any] = {
        "equation": getattr(args, "equation", None),
        "optimizer": getattr(args, "optimizer", None),
        "eta": getattr(args, "eta", None),
        "lambda": getattr(args, "lam", None),
        "init_density": getattr(args, "init_density", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "seeds": getattr(args, "seeds", None),
        "arch": getattr(args, "arch", None),
        "l_enc": getattr(args, "l_enc", None),
        "c_tol": getattr(args, "c_tol", None),
        "name": getattr(args, "name", None),
        "seed": args.seed,
        "data_dir": args.data_dir,
        "out_dir": args.out_dir,
    }
    return load_experiment_config(args.config, overrides)


def _snapshot_paths(args: argparse.Namespace, config: ExperimentConfig):
    if args.train is not None:
        return args.train, args.test
    if args.equation is None and args.config is None:
        raise ConfigurationError("give --train (and optionally --test) or --equation")
    return experiment.data_paths(config.resolved_data_dir(), config.equation)


def _print_table(header: Sequence[str], row: Sequence[str]) -> None:
    widths = [max(len(h), len(v)) for h, v in zip(header, row)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    print("  ".join(v.ljust(w) for v, w in zip(row, widths)))


def run_generate(args: argparse.Namespace) -> None:
    data_dir = args.data_dir or settings.data_dir
    train_path, test_path = experiment.cmd_generate(Equation(args.equation), data_dir, args.grid)
    print(f"train: {train_path}")
    print(f"test: {test_path}")


def run_train(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    summary = experiment.cmd_train(config)
    _print_table(
        ["optimizer", "eta", "lambda", "init_density(%)", "train_loss", "test_loss", "latent_dim", "params"],
        [
            summary.optimizer,
            format_float(summary.eta),
            format_float(summary.lam),
            f"{100 * summary.init_density:g}",
            format_float(summary.train_loss),
            format_float(summary.test_loss),
            str(summary.latent_dim),
            str(summary.nonzero_weights),
        ],
    )
    print(f"seed: {summary.seed} (best of {summary.seeds_tried}), best epoch: {summary.best_epoch}")
    print(f"model: {summary.model_path}")
    print(f"metrics: {summary.metrics_path}")


def run_postprocess(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    train_path, test_path = _snapshot_paths(args, config)
    c_tol = args.c_tol if args.c_tol is not None else config.c_tol
    target, report = experiment.cmd_postprocess(args.model, train_path, test_path, c_tol, args.output)
    _print_table(
        ["eps", "lipschitz", "method", "latent_dim", "params", "train_loss", "test_loss"],
        [
            format_float(report.eps_used),
            format_float(report.lipschitz_estimate),
            report.lipschitz_method.value,
            f"{report.latent_dim_before}->{report.latent_dim_after}",
            f"{report.params_before}->{report.params_after}",
            f"{format_float(report.train_loss_before)}->{format_float(report.train_loss_after)}",
            f"{format_float(report.test_loss_before)}->{format_float(report.test_loss_after)}",
        ],
    )
    print(f"model: {target}")


def run_evaluate(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    train_path, test_path = _snapshot_paths(args, config)
    summary = experiment.cmd_evaluate(args.model, train_path, test_path)
    _print_table(
        ["train_loss", "test_loss", "params", "density", "latent_dim", "latent_rank"],
        [
            format_float(summary.train_loss),
            format_float(summary.test_loss),
            str(summary.nonzero_weights),
            f"{summary.weight_density:.4f}",
            str(summary.latent_dim),
            str(summary.latent_rank),
        ],
    )
    print("layer_sizes: " + ",".join(str(d) for d in summary.layer_sizes))


def run_pod(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    train_path, test_path = _snapshot_paths(args, config)
    summary = experiment.cmd_pod(train_path, test_path, r=args.rank, tol=args.tol)
    _print_table(
        ["r", "train_loss", "train_relative", "test_loss", "test_relative"],
        [
            str(summary.rank),
            format_float(summary.train_loss),
            format_float(summary.train_relative_loss),
            format_float(summary.test_loss),
            format_float(summary.test_relative_loss),
        ],
    )
    print("singular_values: " + " ".join(format_float(s) for s in summary.singular_values))


def run_sweep(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    path, rows = experiment.cmd_sweep(config, args.etas, args.lambdas, args.threads)
    for row in rows:
        if row.best or row.best_sparse:
            tag = "best" if row.best else "best_sparse"
            if row.best and row.best_sparse:
                tag = "best,best_sparse"
            print(f"{tag}: eta={format_float(row.eta)} lambda={format_float(row.lam)} seed={row.seed} "
                  f"test_loss={format_float(row.test_loss)} params={row.nonzero_weights} "
                  f"post_latent_dim={row.post_latent_dim if row.post_latent_dim is not None else '-'}")
    print(f"runs: {len(rows)}, failed: {sum(1 for r in rows if r.status != 'ok')}")
    print(f"sweep: {path}")


COMMANDS = {
    "generate": run_generate,
    "train": run_train,
    "postprocess": run_postprocess,
    "evaluate": run_evaluate,
    "pod": run_pod,
    "sweep": run_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the command and return the exit status."""
    args = build_parser().parse_args(argv)
    setup_logging(debug=args.debug or settings.debug, json_logs=settings.log_json)
    status = 0
    try:
        COMMANDS[args.command](args)
    except (BregmanRomError, ValueError, OSError) as exc:
        record_error(type(exc).__name__, args.command)
        logger.error("command_failed", command=args.command, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    finally:
        out_dir = args.out_dir or settings.out_dir
        try:
            write_metrics(Path(out_dir) / settings.metrics_file)
        except OSError as exc:
            logger.warning("metrics_write_failed", error=str(exc))
    return status
