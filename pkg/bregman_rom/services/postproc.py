"""
Post-training compression: latent truncated SVD followed by bias propagation.

The truncation level is calibrated from the train loss and a Lipschitz
estimate of the decoder so that the induced loss change stays a small
fraction (c_tol) of the loss itself.
"""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from bregman_rom.config import settings
from bregman_rom.logging_config import get_logger
from bregman_rom.models import LipschitzMethod, PostprocReport
from bregman_rom.monitoring import postprocess_runs_total, record_error
from bregman_rom.services.autoencoder import (
    MlpAutoencoder,
    activation_plan,
    count_nonzero_weights,
    effective_latent_dim,
    encode,
    reconstruction_loss,
)
from bregman_rom.services.linalg import Mat, matmul, singular_values, spectral_norm, svd, truncation_rank

logger = get_logger(__name__)


def latent_truncated_svd(model: MlpAutoencoder, eps: float) -> MlpAutoencoder:
    """
    Compress the latent layer to the singular values above ``eps``.

    With W^{l_enc} = U S V^T truncated at rank r:
        W^{l_enc}   <- S_r V_r^T
        W^{l_enc+1} <- W^{l_enc+1} U_r
        b^{l_enc+1} <- W^{l_enc+1} b^{l_enc} + b^{l_enc+1}   (old values)
        b^{l_enc}   <- 0
    The latent layer is linear, so the network function only changes through
    the dropped singular values.
    """
    if eps < 0:
        raise ValueError(f"truncation level must be nonnegative, got {eps}")
    result = model.copy()
    k = result.l_enc - 1
    w_lat, b_lat = result.weights[k], result.biases[k]
    w_next, b_next = result.weights[k + 1], result.biases[k + 1]

    u, s, vt = svd(w_lat)
    r = max(truncation_rank(s, eps), 1)

    result.weights[k] = s[:r, None] * vt[:r]
    result.weights[k + 1] = matmul(w_next, u[:, :r])
    result.biases[k + 1] = matmul(w_next, b_lat[:, None])[:, 0] + b_next
    result.biases[k] = np.zeros(r)
    return result


def lipschitz_upper_bound(model: MlpAutoencoder) -> float:
    """Product of the decoder spectral norms (Lip(ReLU) = 1)."""
    bound = 1.0
    for w in model.weights[model.l_enc:]:
        bound *= spectral_norm(w)
    return bound


def decoder_jacobian(model: MlpAutoencoder, z: np.ndarray) -> Mat:
    """Jacobian of the decoder at latent point ``z`` (forward-mode, ReLU mask from ``z``)."""
    flags = activation_plan(model.arch)[model.l_enc:]
    a = np.asarray(z, dtype=np.float64).reshape(-1)
    jac = np.eye(a.shape[0])
    for w, b, relu in zip(model.weights[model.l_enc:], model.biases[model.l_enc:], flags):
        pre = w @ a + b
        jac = w @ jac
        if relu:
            mask = pre > 0.0
            jac = jac * mask[:, None]
            a = np.where(mask, pre, 0.0)
        else:
            a = pre
    return jac


def lipschitz_jacobian_estimate(model: MlpAutoencoder, latent_samples) -> float:
    """Largest decoder Jacobian spectral norm over the latent samples (columns)."""
    samples = np.asarray(latent_samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[1] == 0:
        raise ValueError("at least one latent sample is required")
    best = 0.0
    for j in range(samples.shape[1]):
        jac = decoder_jacobian(model, samples[:, j])
        if not np.any(jac):
            continue
        best = max(best, spectral_norm(jac))
    return best


def compute_eps(loss: float, lip: float, c_tol: float) -> float:
    """Truncation level c_tol * loss / lip."""
    if not lip > 0:
        raise ValueError(f"Lipschitz estimate must be positive, got {lip}")
    if not c_tol > 0:
        raise ValueError(f"c_tol must be positive, got {c_tol}")
    if loss < 0:
        raise ValueError(f"loss must be nonnegative, got {loss}")
    return c_tol * loss / lip


def _fold_rows(model: MlpAutoencoder, idx: int, flags: Tuple[bool, ...]) -> bool:
    """Remove the zero rows of layer idx+1 (0-based ``idx``). Returns whether anything changed."""
    w, b = model.weights[idx], model.biases[idx]
    w_next, b_next = model.weights[idx + 1], model.biases[idx + 1]
    zero = ~np.any(w != 0.0, axis=1)
    if not np.any(zero):
        return False
    if np.all(zero) and w.shape[0] == 1 and b[0] == 0.0 and not np.any(w_next[:, 0]):
        # already reduced to a single inert neuron
        return False

    activated = np.maximum(b, 0.0) if flags[idx] else b
    dead = np.flatnonzero(zero)
    b_next = b_next + w_next[:, dead] @ activated[dead]

    if np.all(zero):
        # keep one inert neuron so the layer stays well-formed
        model.weights[idx] = np.zeros((1, w.shape[1]))
        model.biases[idx] = np.zeros(1)
        model.weights[idx + 1] = np.zeros((w_next.shape[0], 1))
    else:
        alive = ~zero
        model.weights[idx] = w[alive]
        model.biases[idx] = b[alive]
        model.weights[idx + 1] = w_next[:, alive]
    model.biases[idx + 1] = b_next
    return True


def propagate_biases(model: MlpAutoencoder) -> MlpAutoencoder:
    """
    Delete neurons whose incoming weight row is zero.

    Such a neuron emits the constant sigma(b_i); its contribution
    W^{l+1}[:, i] * sigma(b_i) is added to b^{l+1} and row i, b_i and column i
    of W^{l+1} are removed. Output-layer rows are never removed. Repeats
    until no hidden layer has a zero row.
    """
    result = model.copy()
    flags = activation_plan(result.arch)
    changed = True
    while changed:
        changed = False
        for idx in range(result.n_layers - 1):
            if _fold_rows(result, idx, flags):
                changed = True
    return result


def _lipschitz_samples(model: MlpAutoencoder, train_x: Mat) -> Mat:
    n = train_x.shape[1]
    cap = min(n, settings.lipschitz_max_samples)
    cols = np.unique(np.linspace(0, n - 1, num=cap).round().astype(int))
    return encode(model, train_x[:, cols])


def run_postprocessing(model: MlpAutoencoder, train_x: Mat, c_tol: float,
                       test_x: Optional[Mat] = None) -> Tuple[MlpAutoencoder, PostprocReport]:
    """
    Latent truncated SVD followed by bias propagation.

    The decoder Lipschitz constant is the smaller of the spectral-norm product
    and the largest Jacobian norm over encoded training samples. A decoder
    with Lipschitz constant 0 ignores its input, so then only the leading
    latent mode is kept.

    Args:
        model: trained model
        train_x: training snapshots, used for the loss and the latent samples
        c_tol: tolerated relative loss change
        test_x: optional test snapshots for the report

    Returns:
        (compressed model, report)
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    try:
        train_before = reconstruction_loss(model, train_x)
        test_before = reconstruction_loss(model, test_x) if test_x is not None else None

        upper = lipschitz_upper_bound(model)
        jacobian = lipschitz_jacobian_estimate(model, _lipschitz_samples(model, train_x))
        if jacobian <= upper:
            lip, method = jacobian, LipschitzMethod.JACOBIAN
        else:
            lip, method = upper, LipschitzMethod.UPPER_BOUND

        if lip > 0:
            eps = compute_eps(train_before, lip, c_tol)
        else:
            eps = float(singular_values(model.weights[model.l_enc - 1])[0])

        truncated = latent_truncated_svd(model, eps)
        compressed = propagate_biases(truncated)
    except Exception as exc:
        postprocess_runs_total.labels(status="failed").inc()
        record_error(type(exc).__name__, "postproc")
        raise

    report = PostprocReport(
        c_tol=c_tol,
        eps_used=eps,
        lipschitz_estimate=lip,
        lipschitz_method=method,
        lipschitz_upper_bound=upper,
        lipschitz_jacobian=jacobian,
        latent_dim_before=effective_latent_dim(model),
        latent_dim_after=effective_latent_dim(compressed),
        params_before=count_nonzero_weights(model),
        params_after=count_nonzero_weights(compressed),
        train_loss_before=train_before,
        train_loss_after=reconstruction_loss(compressed, train_x),
        test_loss_before=test_before,
        test_loss_after=reconstruction_loss(compressed, test_x) if test_x is not None else None,
    )
    postprocess_runs_total.labels(status="completed").inc()
    logger.info("postprocess_completed", eps=eps, lipschitz=lip, method=method.value,
                latent_dim_before=report.latent_dim_before, latent_dim_after=report.latent_dim_after,
                params_before=report.params_before, params_after=report.params_after)
    return compressed, report
