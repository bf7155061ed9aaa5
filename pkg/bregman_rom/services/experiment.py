"""
Experiment harness: dataset generation, training, post-processing,
evaluation, POD baselines and hyperparameter sweeps.

Each command reads and writes the artifact files in ``persistence`` and
returns a pydantic summary; printing is left to the CLI.

Concurrency Model
-----------------
Sweep runs are independent. They execute concurrently (up to
``threads``) using ``asyncio.Semaphore`` + ``asyncio.to_thread`` +
``asyncio.gather``. Every run owns its model and optimizer state, and
results are collected in grid order regardless of completion order.
"""
from __future__ import annotations

import asyncio
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from bregman_rom.config import ExperimentConfig, settings
from bregman_rom.exceptions import BregmanRomError, TrainingDivergedError
from bregman_rom.logging_config import get_logger, run_context
from bregman_rom.models import (
    Equation,
    EvaluationSummary,
    PodSummary,
    PostprocReport,
    SweepRow,
    TrainSummary,
)
from bregman_rom.monitoring import command_duration, record_error, sweep_runs_total, track_time
from bregman_rom.services import persistence
from bregman_rom.services.autoencoder import (
    Architecture,
    MlpAutoencoder,
    count_nonzero_weights,
    dense_arch,
    density,
    effective_latent_dim,
    init_dense,
    latent_rank,
    reconstruction_loss,
    sparsify_rows,
    spectral_sparsify,
)
from bregman_rom.services.optim import TrainResult, measure, train
from bregman_rom.services.pde_data import (
    ADVECTION_TEST_MU,
    ADVECTION_TRAIN_MU,
    DIFFUSION_TEST_MU,
    DIFFUSION_TRAIN_MU,
    SnapshotSet,
    gen_advection,
    gen_diffusion,
    gen_reaction_diffusion,
    pod,
    pod_error,
    pod_loss,
)
from bregman_rom.services.postproc import run_postprocessing
from bregman_rom.services.prox import RegSpec
from bregman_rom.utils import config_hash

logger = get_logger(__name__)

SPARSE_COMPETITIVE_FACTOR = 10.0


# ----------------------------------------------------------------------------
# Paths
# ----------------------------------------------------------------------------

def data_paths(data_dir: Path, equation: Equation) -> Tuple[Path, Path]:
    """Train and test snapshot files of ``equation``."""
    stem = Equation(equation).value
    return Path(data_dir) / f"{stem}_train.snp", Path(data_dir) / f"{stem}_test.snp"


def model_path(out_dir: Path, name: str) -> Path:
    return Path(out_dir) / f"{name}.model.json"


def metrics_path(out_dir: Path, name: str) -> Path:
    return Path(out_dir) / f"{name}.metrics.csv"


def _model_stem(path: Path) -> str:
    name = Path(path).name
    return name[:-len(".model.json")] if name.endswith(".model.json") else Path(path).stem


def postprocessed_model_path(source: Path) -> Path:
    """Default location of the compressed model: ``<stem>.post.model.json`` next to ``source``."""
    return Path(source).with_name(f"{_model_stem(source)}.post.model.json")


def report_path(model_file: Path) -> Path:
    """Post-processing report stored next to a compressed model."""
    return Path(model_file).with_name(f"{_model_stem(model_file)}.report.json")


# ----------------------------------------------------------------------------
# Generation
# ----------------------------------------------------------------------------

def generate_dataset(equation: Equation, grid: Optional[int] = None) -> Tuple[SnapshotSet, SnapshotSet]:
    """Train and test snapshot sets with the standard parameter splits."""
    equation = Equation(equation)
    if equation == Equation.DIFFUSION:
        return (gen_diffusion(DIFFUSION_TRAIN_MU, split="train"),
                gen_diffusion(DIFFUSION_TEST_MU, split="test"))
    if equation == Equation.ADVECTION:
        return (gen_advection(ADVECTION_TRAIN_MU, split="train"),
                gen_advection(ADVECTION_TEST_MU, split="test"))
    return gen_reaction_diffusion(n=grid or settings.reaction_diffusion_grid)


@track_time(command_duration, labels={"command": "generate"})
def cmd_generate(equation: Equation, data_dir: Path, grid: Optional[int] = None) -> Tuple[Path, Path]:
    """Generate and store the train/test snapshot files."""
    train_set, test_set = generate_dataset(equation, grid)
    train_path, test_path = data_paths(data_dir, equation)
    persistence.save_snapshots(train_set, train_path)
    persistence.save_snapshots(test_set, test_path)
    logger.info("dataset_generated", equation=Equation(equation).value,
                train_columns=train_set.n_snapshots, test_columns=test_set.n_snapshots)
    return train_path, test_path


def load_dataset(config: ExperimentConfig) -> Tuple[SnapshotSet, SnapshotSet]:
    train_path, test_path = data_paths(config.resolved_data_dir(), config.equation)
    return persistence.load_snapshots(train_path), persistence.load_snapshots(test_path)


# ----------------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------------

def build_initial_model(config: ExperimentConfig, seed: int) -> Tuple[MlpAutoencoder, Optional[RegSpec]]:
    """
    Dense init, then (Bregman optimizers) row sparsification of every layer
    but the latent one and a rank-1 latent layer.
    """
    arch = Architecture(layer_sizes=tuple(config.arch), l_enc=config.l_enc)
    model = init_dense(arch, seed)
    if not config.optimizer.is_bregman:
        return model, None
    if config.init_density < 1.0:
        model = sparsify_rows(model, config.init_density, seed)
    model = spectral_sparsify(model)
    return model, RegSpec.for_model(config.lam, model)


def _model_metadata(config: ExperimentConfig, seed: int) -> dict:
    return {
        "equation": config.equation.value,
        "optimizer": config.optimizer.value,
        "eta": config.eta,
        "lambda": config.lam,
        "init_density": config.init_density,
        "seed": seed,
        "config_hash": config_hash(config.model_dump(mode="json", by_alias=True, exclude={"data_dir", "out_dir"})),
    }


@dataclass
class SeedRun:
    """Outcome of one seed."""
    seed: int
    result: Optional[TrainResult] = None
    error: Optional[TrainingDivergedError] = None
    test_loss: float = math.inf


def train_seed(config: ExperimentConfig, train_set: SnapshotSet, test_set: SnapshotSet, seed: int) -> SeedRun:
    """Build, train and score a single seed; divergence is captured, not raised."""
    with run_context(equation=config.equation.value, optimizer=config.optimizer.value, seed=seed,
                    eta=config.eta, lam=config.lam):
        model, spec = build_initial_model(config, seed)
        try:
            result = train(model, spec, config.optimizer, config.eta, train_set.x, test_set.x,
                           config.epochs, config.batch_size, seed)
        except TrainingDivergedError as exc:
            return SeedRun(seed=seed, error=exc)
        result.best_model.metadata = dict(result.best_model.metadata, **_model_metadata(config, seed),
                                          best_epoch=result.best_epoch)
        return SeedRun(seed=seed, result=result, test_loss=reconstruction_loss(result.best_model, test_set.x))


def best_of_seeds(runs: Sequence[SeedRun]) -> SeedRun:
    """Lowest test loss among completed runs; the first seed wins ties."""
    completed = [run for run in runs if run.result is not None]
    if not completed:
        raise runs[-1].error
    return min(completed, key=lambda run: run.test_loss)


@track_time(command_duration, labels={"command": "train"})
def cmd_train(config: ExperimentConfig) -> TrainSummary:
    """
    Train ``config.seeds`` consecutive seeds and keep the best test loss.

    Writes the retained model and its per-epoch metrics CSV. When every seed
    diverges the partial metrics of the last one are written before
    TrainingDivergedError propagates.
    """
    train_set, test_set = load_dataset(config)
    out_dir = config.resolved_out_dir()
    name = config.run_name
    runs = [train_seed(config, train_set, test_set, config.seed + k) for k in range(config.seeds)]

    completed = [run for run in runs if run.result is not None]
    if not completed:
        failed = runs[-1].error
        persistence.write_metrics_csv(failed.metrics, metrics_path(out_dir, name))
        record_error(type(failed).__name__, "train")
        raise failed

    chosen = best_of_seeds(runs)
    result = chosen.result
    model_file = persistence.save_model(result.best_model, model_path(out_dir, name))
    metrics_file = persistence.write_metrics_csv(result.metrics, metrics_path(out_dir, name))
    best = result.best_model
    summary = TrainSummary(
        equation=config.equation.value,
        optimizer=config.optimizer.value,
        eta=config.eta,
        lam=config.lam,
        init_density=config.init_density,
        seed=chosen.seed,
        seeds_tried=len(runs),
        epochs=config.epochs,
        best_epoch=result.best_epoch,
        train_loss=reconstruction_loss(best, train_set.x),
        test_loss=chosen.test_loss,
        nonzero_weights=count_nonzero_weights(best),
        dense_weights=dense_arch(best).dense_weight_count(),
        latent_dim=effective_latent_dim(best),
        model_path=str(model_file),
        metrics_path=str(metrics_file),
    )
    logger.info("train_completed", seed=chosen.seed, test_loss=summary.test_loss,
                nonzero_weights=summary.nonzero_weights, latent_dim=summary.latent_dim)
    return summary


# ----------------------------------------------------------------------------
# Post-processing and evaluation
# ----------------------------------------------------------------------------

@track_time(command_duration, labels={"command": "postprocess"})
def cmd_postprocess(model_file: Path, train_path: Path, test_path: Optional[Path], c_tol: float,
                    out_model: Optional[Path] = None) -> Tuple[Path, PostprocReport]:
    """Compress a stored model; writes the new model and a JSON report."""
    model = persistence.load_model(model_file)
    train_set = persistence.load_snapshots(train_path)
    test_x = persistence.load_snapshots(test_path).x if test_path is not None else None
    compressed, report = run_postprocessing(model, train_set.x, c_tol, test_x)
    compressed.metadata = dict(model.metadata, postprocessed=True, c_tol=c_tol)
    target = Path(out_model) if out_model is not None else postprocessed_model_path(model_file)
    persistence.save_model(compressed, target)
    persistence.save_report(report, report_path(target))
    return target, report


@track_time(command_duration, labels={"command": "evaluate"})
def cmd_evaluate(model_file: Path, train_path: Path, test_path: Optional[Path] = None) -> EvaluationSummary:
    """Losses, size and latent rank of a stored model."""
    model = persistence.load_model(model_file)
    train_x = persistence.load_snapshots(train_path).x
    test_x = persistence.load_snapshots(test_path).x if test_path is not None else None
    return EvaluationSummary(
        train_loss=reconstruction_loss(model, train_x),
        test_loss=reconstruction_loss(model, test_x) if test_x is not None else None,
        nonzero_weights=count_nonzero_weights(model),
        weight_density=density(model),
        latent_dim=effective_latent_dim(model),
        latent_rank=latent_rank(model),
        layer_sizes=list(model.layer_sizes),
    )


@track_time(command_duration, labels={"command": "pod"})
def cmd_pod(train_path: Path, test_path: Optional[Path] = None, r: Optional[int] = None,
            tol: Optional[float] = None) -> PodSummary:
    """POD of the training snapshots, evaluated on both splits."""
    train_set = persistence.load_snapshots(train_path)
    basis = pod(train_set, r=r, tol=tol)
    train_loss, train_rel = pod_loss(basis, train_set)
    summary = PodSummary(
        rank=basis.rank,
        singular_values=[float(s) for s in basis.singular_values[:basis.rank]],
        train_error=pod_error(basis, train_set),
        train_loss=train_loss,
        train_relative_loss=train_rel,
    )
    if test_path is not None:
        test_set = persistence.load_snapshots(test_path)
        test_loss, test_rel = pod_loss(basis, test_set)
        summary.test_error = pod_error(basis, test_set)
        summary.test_loss = test_loss
        summary.test_relative_loss = test_rel
    return summary


# ----------------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------------

def select_best(rows: Sequence[SweepRow]) -> List[SweepRow]:
    """
    Mark the lowest-test-loss run and the sparse-competitive run.

    The sparse-competitive run has the fewest parameters (post-processed count
    when available) among runs within 10x of the best test loss. Ties go to
    the earlier row. Only completed runs qualify.
    """
    marked = [row.model_copy(update={"best": False, "best_sparse": False}) for row in rows]
    candidates = [i for i, row in enumerate(marked) if row.status == "ok" and row.test_loss is not None]
    if not candidates:
        return marked
    best = min(candidates, key=lambda i: (marked[i].test_loss, i))
    marked[best].best = True
    limit = SPARSE_COMPETITIVE_FACTOR * marked[best].test_loss

    def params(row: SweepRow) -> int:
        return row.post_params if row.post_params is not None else row.nonzero_weights

    competitive = [i for i in candidates if marked[i].test_loss <= limit]
    sparse = min(competitive, key=lambda i: (params(marked[i]), i))
    marked[sparse].best_sparse = True
    return marked


class SweepRunner:
    """Runs a grid of (eta, lambda, seed) trainings and tabulates them."""

    def __init__(self, template: ExperimentConfig, train_set: SnapshotSet, test_set: SnapshotSet,
                 threads: int = 1):
        self.template = template
        self.train_set = train_set
        self.test_set = test_set
        self.threads = max(1, threads)

    def grid(self, etas: Sequence[float], lams: Sequence[float], seeds: Sequence[int]) -> List[ExperimentConfig]:
        """Configurations in grid order: eta, then lambda, then seed."""
        base = self.template.model_dump(by_alias=True)
        configs = []
        for eta in etas:
            for lam in lams:
                for seed in seeds:
                    configs.append(ExperimentConfig.model_validate(
                        dict(base, eta=eta, **{"lambda": lam}, seed=seed, seeds=1)))
        return configs

    def run_one(self, config: ExperimentConfig) -> SweepRow:
        """Train one configuration; failures become rows with status 'failed'."""
        row = SweepRow(eta=config.eta, lam=config.lam, seed=config.seed, status="ok")
        try:
            run = train_seed(config, self.train_set, self.test_set, config.seed)
            if run.result is None:
                exc = run.error
                sweep_runs_total.labels(status="diverged").inc()
                return row.model_copy(update={"status": "diverged", "epochs_completed": len(exc.metrics),
                                              "error": str(exc)})
            best = run.result.best_model
            spec = RegSpec.for_model(config.lam, best) if config.optimizer.is_bregman else None
            record = measure(run.result.best_epoch, best, spec, self.train_set.x, self.test_set.x)
            update = {
                "epochs_completed": len(run.result.metrics),
                "train_loss": record.train_loss,
                "test_loss": record.test_loss,
                "reg_value": record.reg_value,
                "weight_density": record.weight_density,
                "nonzero_weights": record.nonzero_weights,
                "latent_dim": record.effective_latent_dim,
            }
            if config.optimizer.is_bregman:
                _, report = run_postprocessing(best, self.train_set.x, config.c_tol)
                update["post_latent_dim"] = report.latent_dim_after
                update["post_params"] = report.params_after
            sweep_runs_total.labels(status="ok").inc()
            return row.model_copy(update=update)
        except BregmanRomError as exc:
            sweep_runs_total.labels(status="failed").inc()
            record_error(type(exc).__name__, "sweep")
            logger.error("sweep_run_failed", eta=config.eta, lam=config.lam, seed=config.seed, error=str(exc))
            return row.model_copy(update={"status": "failed", "error": str(exc)})

    async def run(self, configs: Sequence[ExperimentConfig]) -> List[SweepRow]:
        semaphore = asyncio.Semaphore(self.threads)

        async def _run_bounded(config: ExperimentConfig) -> SweepRow:
            async with semaphore:
                return await asyncio.to_thread(self.run_one, config)

        results = await asyncio.gather(*[_run_bounded(c) for c in configs], return_exceptions=True)
        rows = []
        for config, res in zip(configs, results):
            if isinstance(res, Exception):
                logger.error("sweep_run_crashed", eta=config.eta, lam=config.lam, seed=config.seed, error=str(res))
                record_error(type(res).__name__, "sweep")
                rows.append(SweepRow(eta=config.eta, lam=config.lam, seed=config.seed, status="failed",
                                     error=str(res)))
            else:
                rows.append(res)
        return select_best(rows)


@track_time(command_duration, labels={"command": "sweep"})
def cmd_sweep(template: ExperimentConfig, etas: Sequence[float], lams: Sequence[float],
              threads: Optional[int] = None) -> Tuple[Path, List[SweepRow]]:
    """
    Run every (eta, lambda, seed) combination and write the sweep CSV.

    Seeds are ``template.seed`` .. ``template.seed + template.seeds - 1``.
    SGD and Adam ignore lambda, so their grids collapse to lambda = 0.
    """
    if not etas:
        raise ValueError("at least one learning rate is required")
    if not template.optimizer.is_bregman:
        lams = [0.0]
    elif not lams:
        raise ValueError("at least one regularization constant is required")
    train_set, test_set = load_dataset(template)
    seeds = [template.seed + k for k in range(template.seeds)]
    runner = SweepRunner(template, train_set, test_set, threads or settings.threads)
    configs = runner.grid(etas, lams, seeds)
    logger.info("sweep_started", runs=len(configs), threads=runner.threads)
    rows = asyncio.run(runner.run(configs))
    path = Path(template.resolved_out_dir()) / f"{template.run_name}.sweep.csv"
    persistence.write_sweep_csv(rows, path)
    logger.info("sweep_completed", runs=len(rows), failed=sum(1 for r in rows if r.status != "ok"))
    return path, rows
