"""
Optimizers sharing one step interface: SGD, Adam, LinBreg and AdaBreg.

The Bregman variants keep a dual variable v; each step moves v along the
(possibly Adam-preconditioned) negative gradient and maps it back to the
parameters with the prox of the regularizer:

    v <- v - eta * direction
    theta <- prox_R(v)

Biases are unregularized, so their trajectories coincide with SGD/Adam.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from bregman_rom.config import settings
from bregman_rom.exceptions import NonFiniteError, TrainingDivergedError
from bregman_rom.logging_config import get_logger
from bregman_rom.models import MetricsRecord, OptimizerKind
from bregman_rom.monitoring import epoch_duration, optimizer_steps_total, record_error, training_runs_total
from bregman_rom.services.autoencoder import (
    MlpAutoencoder,
    ParamSet,
    count_nonzero_weights,
    density,
    effective_latent_dim,
    loss_and_grad,
    reconstruction_loss,
)
from bregman_rom.services.linalg import Mat, svd
from bregman_rom.services.prox import RegSpec, prox_params, reg_value

logger = get_logger(__name__)

SHUFFLE_STREAM = 3

# Singular values at or below this fraction of s_1 are treated as zero when
# inverting the nuclear prox
DUAL_RANK_RTOL = 1e-12


@dataclass
class OptState:
    """Optimizer state confined to one training run."""
    kind: OptimizerKind
    eta: float
    dual: Optional[ParamSet] = None
    m: Optional[ParamSet] = None
    s: Optional[ParamSet] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step_count: int = 0

    @classmethod
    def create(cls, kind: OptimizerKind, eta: float, model: MlpAutoencoder,
               spec: Optional[RegSpec] = None) -> "OptState":
        """Fresh state; Bregman kinds invert the prox so training starts at ``model``."""
        if not eta > 0:
            raise ValueError(f"learning rate must be positive, got {eta}")
        kind = OptimizerKind(kind)
        state = cls(kind=kind, eta=eta)
        if kind.is_bregman:
            if spec is None:
                raise ValueError(f"{kind.value} needs a regularizer")
            state.dual = init_dual(spec, model)
        if kind.uses_moments:
            state.m = ParamSet.zeros_like(model.params())
            state.s = ParamSet.zeros_like(model.params())
        return state


def _invert_group_rows(w: Mat, tau: float) -> Mat:
    norms = np.linalg.norm(w, axis=1)
    scale = np.ones_like(norms)
    nonzero = norms > 0.0
    scale[nonzero] = 1.0 + tau / norms[nonzero]
    return w * scale[:, None]


def _invert_nuclear(w: Mat, tau: float) -> Mat:
    u, s, vt = svd(w)
    if s[0] <= 0.0:
        return np.zeros_like(w)
    r = int(np.count_nonzero(s > DUAL_RANK_RTOL * s[0]))
    return (u[:, :r] * (s[:r] + tau)) @ vt[:r]


def init_dual(spec: RegSpec, model: MlpAutoencoder) -> ParamSet:
    """
    Dual variable v_0 with prox_params(spec, v_0) == model parameters.

    Nonzero rows r become r * (1 + lam * sqrt(d^l) / ||r||), zero rows stay
    zero, the nuclear layer's positive singular values are shifted by lam and
    biases are copied.
    """
    params = model.params()
    if spec.lam == 0.0:
        return params.copy()
    weights = []
    for layer, w in enumerate(params.weights, start=1):
        tau = spec.threshold(layer)
        if layer == spec.nuclear_layer:
            weights.append(_invert_nuclear(w, tau))
        else:
            weights.append(_invert_group_rows(w, tau))
    return ParamSet(weights, [b.copy() for b in params.biases])


def _axpy(params: ParamSet, eta: float, direction: ParamSet) -> ParamSet:
    """params - eta * direction, blockwise."""
    return ParamSet(
        [p - eta * d for p, d in zip(params.weights, direction.weights)],
        [p - eta * d for p, d in zip(params.biases, direction.biases)],
    )


def _ensure_finite(params: ParamSet, what: str, state: OptState) -> None:
    if not params.all_finite():
        raise NonFiniteError(f"non-finite {what} after {state.kind.value} step {state.step_count + 1}")


def _adam_direction(state: OptState, grads: ParamSet) -> ParamSet:
    """Update the moment estimates in place and return m_hat / (sqrt(s_hat) + eps_hat)."""
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    m_arrays = list(state.m.arrays())
    s_arrays = list(state.s.arrays())
    directions = []
    for m, s, g in zip(m_arrays, s_arrays, grads.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        s *= b2
        s += (1.0 - b2) * (g * g)
        directions.append((m / c1) / (np.sqrt(s / c2) + state.eps_hat))
    n = len(state.m.weights)
    return ParamSet(directions[:n], directions[n:])


def sgd_step(state: OptState, model: MlpAutoencoder, grads: ParamSet) -> MlpAutoencoder:
    """theta <- theta - eta * g."""
    params = _axpy(model.params(), state.eta, grads)
    _ensure_finite(params, "parameters", state)
    state.step_count += 1
    return model.with_params(params)


def adam_step(state: OptState, model: MlpAutoencoder, grads: ParamSet) -> MlpAutoencoder:
    """Bias-corrected Adam update."""
    direction = _adam_direction(state, grads)
    params = _axpy(model.params(), state.eta, direction)
    _ensure_finite(params, "parameters", state)
    state.step_count += 1
    return model.with_params(params)


def linbreg_step(state: OptState, spec: RegSpec, model: MlpAutoencoder, grads: ParamSet) -> MlpAutoencoder:
    """v <- v - eta * g; theta <- prox(v)."""
    state.dual = _axpy(state.dual, state.eta, grads)
    _ensure_finite(state.dual, "dual variable", state)
    state.step_count += 1
    return model.with_params(prox_params(spec, state.dual))


def adabreg_step(state: OptState, spec: RegSpec, model: MlpAutoencoder, grads: ParamSet) -> MlpAutoencoder:
    """v <- v - eta * m_hat / (sqrt(s_hat) + eps_hat); theta <- prox(v)."""
    direction = _adam_direction(state, grads)
    state.dual = _axpy(state.dual, state.eta, direction)
    _ensure_finite(state.dual, "dual variable", state)
    state.step_count += 1
    return model.with_params(prox_params(spec, state.dual))


def step(state: OptState, spec: Optional[RegSpec], model: MlpAutoencoder, grads: ParamSet) -> MlpAutoencoder:
    """Apply one step of the optimizer named by ``state.kind``."""
    if state.kind == OptimizerKind.SGD:
        return sgd_step(state, model, grads)
    if state.kind == OptimizerKind.ADAM:
        return adam_step(state, model, grads)
    if state.kind == OptimizerKind.LINBREG:
        return linbreg_step(state, spec, model, grads)
    return adabreg_step(state, spec, model, grads)


@dataclass
class TrainResult:
    """Outcome of a training run."""
    best_model: MlpAutoencoder
    final_model: MlpAutoencoder
    metrics: List[MetricsRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_record(self) -> Optional[MetricsRecord]:
        for record in self.metrics:
            if record.epoch == self.best_epoch:
                return record
        return None


def measure(epoch: int, model: MlpAutoencoder, spec: Optional[RegSpec], train_x: Mat,
            test_x: Optional[Mat], wall_time: float = 0.0) -> MetricsRecord:
    """Metrics of ``model`` on the full train and test sets."""
    train_loss = reconstruction_loss(model, train_x)
    test_loss = reconstruction_loss(model, test_x) if test_x is not None else train_loss
    return MetricsRecord(
        epoch=epoch,
        train_loss=train_loss,
        test_loss=test_loss,
        reg_value=reg_value(spec, model) if spec is not None else 0.0,
        weight_density=density(model),
        nonzero_weights=count_nonzero_weights(model),
        effective_latent_dim=effective_latent_dim(model),
        wall_time_s=wall_time if settings.record_wall_time else 0.0,
    )


def _divergence_marker(epoch: int, model: MlpAutoencoder) -> MetricsRecord:
    return MetricsRecord(
        epoch=epoch,
        train_loss=math.nan,
        test_loss=math.nan,
        reg_value=math.nan,
        weight_density=density(model),
        nonzero_weights=count_nonzero_weights(model),
        effective_latent_dim=effective_latent_dim(model),
        diverged=True,
    )


def train(
    model: MlpAutoencoder,
    spec: Optional[RegSpec],
    kind: OptimizerKind,
    eta: float,
    train_x: Mat,
    test_x: Optional[Mat],
    epochs: int,
    batch_size: int,
    seed: int,
    state: Optional[OptState] = None,
) -> TrainResult:
    """
    Mini-batch training loop.

    Every epoch shuffles the training columns with a stream of ``seed``,
    steps through the batches (the last one may be smaller) and records the
    full train/test losses, regularizer value, density and latent width.
    The parameters with the lowest test loss are retained.

    Args:
        model: initial (already sparsified) model
        spec: regularizer; required for LinBreg/AdaBreg, may be None otherwise
        kind: optimizer
        eta: learning rate
        train_x: training snapshots (d^0 x N), N >= 1
        test_x: test snapshots used for model selection (train set when None)
        epochs: number of epochs (0 returns the input model)
        batch_size: columns per batch
        seed: run seed

    Returns:
        TrainResult with best/final models and one MetricsRecord per epoch

    Raises:
        TrainingDivergedError: a loss, gradient or update became non-finite;
            carries the metrics so far (ending in a divergence marker) and the
            best model seen
    """
    kind = OptimizerKind(kind)
    train_x = np.asarray(train_x, dtype=np.float64)
    n_samples = train_x.shape[1]
    if n_samples == 0:
        raise ValueError("training set is empty")
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    if epochs < 0:
        raise ValueError(f"epochs must be nonnegative, got {epochs}")
    if state is None:
        state = OptState.create(kind, eta, model, spec)

    rng = np.random.default_rng([seed, SHUFFLE_STREAM])
    metrics: List[MetricsRecord] = []
    best_model = model.copy()
    best_epoch = 0
    best_loss = math.inf

    logger.info("training_started", optimizer=kind.value, eta=eta, lam=spec.lam if spec else 0.0,
                epochs=epochs, batch_size=batch_size, samples=n_samples, seed=seed)

    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n_samples)
        n_batches = 0
        try:
            for batch_index, start in enumerate(range(0, n_samples, batch_size)):
                batch = train_x[:, order[start:start + batch_size]]
                _, grads = loss_and_grad(model, batch, epoch=epoch, batch_index=batch_index)
                model = step(state, spec, model, grads)
                n_batches += 1
            record = measure(epoch, model, spec, train_x, test_x, time.perf_counter() - started)
            if not (math.isfinite(record.train_loss) and math.isfinite(record.test_loss)):
                raise NonFiniteError("non-finite epoch loss", epoch=epoch)
        except NonFiniteError as exc:
            metrics.append(_divergence_marker(epoch, model))
            record_error(type(exc).__name__, "optim")
            training_runs_total.labels(optimizer=kind.value, status="diverged").inc()
            logger.error("training_diverged", epoch=epoch, batch=exc.batch, error=str(exc))
            raise TrainingDivergedError(
                f"{kind.value} diverged: {exc}",
                epoch=epoch,
                batch=exc.batch,
                metrics=metrics,
                model=best_model,
            ) from exc
        finally:
            optimizer_steps_total.labels(optimizer=kind.value).inc(n_batches)
            epoch_duration.labels(optimizer=kind.value).observe(time.perf_counter() - started)

        metrics.append(record)
        if record.test_loss < best_loss:
            best_loss = record.test_loss
            best_epoch = epoch
            best_model = model.copy()
        logger.debug("epoch_completed", epoch=epoch, train_loss=record.train_loss, test_loss=record.test_loss,
                     density=record.weight_density, latent_dim=record.effective_latent_dim)

    training_runs_total.labels(optimizer=kind.value, status="completed").inc()
    logger.info("training_completed", optimizer=kind.value, epochs=epochs, best_epoch=best_epoch,
                best_test_loss=best_loss if best_epoch else None)
    return TrainResult(best_model=best_model, final_model=model, metrics=metrics, best_epoch=best_epoch)
