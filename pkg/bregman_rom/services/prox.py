"""
Regularizer and proximal operators.

R(theta) = lam * (sum_{l != l_enc} sqrt(d^l) ||W^l||_{1,2} + ||W^{l_enc}||_*)

The prox of R splits over parameter blocks: row-group soft-thresholding for
the group layers, singular value thresholding for the latent layer and the
identity for biases. Thresholded rows and singular values are written as
literal zeros.
"""
from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from bregman_rom.exceptions import ShapeMismatchError
from bregman_rom.services.autoencoder import MlpAutoencoder, ParamSet
from bregman_rom.services.linalg import Mat, singular_values, svd


class RegSpec(BaseModel):
    """Regularization constant, per-layer row-group weights and the nuclear layer (1-based)."""
    model_config = ConfigDict(frozen=True)

    lam: float = Field(..., ge=0.0)
    row_group_weights: Tuple[float, ...]
    nuclear_layer: int
    delta: float = 1.0

    @model_validator(mode="after")
    def validate_layers(self) -> "RegSpec":
        if any(not w > 0 for w in self.row_group_weights):
            raise ValueError("row group weights must be positive")
        if not 1 <= self.nuclear_layer <= len(self.row_group_weights):
            raise ValueError(f"nuclear layer {self.nuclear_layer} out of range")
        if self.delta != 1.0:
            raise ValueError("only delta = 1 is supported")
        return self

    @classmethod
    def for_model(cls, lam: float, model: MlpAutoencoder) -> "RegSpec":
        """sqrt(d^l) row-group weights and the model's latent layer as nuclear layer."""
        return cls(
            lam=lam,
            row_group_weights=tuple(math.sqrt(w.shape[0]) for w in model.weights),
            nuclear_layer=model.l_enc,
        )

    def threshold(self, layer: int) -> float:
        """Prox threshold applied to layer ``layer`` (1-based)."""
        if layer == self.nuclear_layer:
            return self.lam * self.delta
        return self.lam * self.delta * self.row_group_weights[layer - 1]


def group_row_norm(w: Mat) -> float:
    """||W||_{1,2}: sum of the row 2-norms."""
    return float(np.sum(np.linalg.norm(w, axis=1)))


def reg_value(spec: RegSpec, model: MlpAutoencoder) -> float:
    """Value of R at the model parameters; biases contribute nothing."""
    _check_layers(spec, len(model.weights))
    if spec.lam == 0.0:
        return 0.0
    total = 0.0
    for layer, w in enumerate(model.weights, start=1):
        if layer == spec.nuclear_layer:
            total += float(np.sum(singular_values(w)))
        else:
            total += spec.row_group_weights[layer - 1] * group_row_norm(w)
    return spec.lam * total


def prox_group_rows(w: Mat, tau: float) -> Mat:
    """Block soft-thresholding: each row r becomes r * max(0, 1 - tau / ||r||)."""
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    w = np.asarray(w, dtype=np.float64)
    norms = np.linalg.norm(w, axis=1)
    keep = norms > tau
    scale = np.zeros_like(norms)
    scale[keep] = 1.0 - tau / norms[keep]
    out = w * scale[:, None]
    out[~keep, :] = 0.0
    return out


def prox_nuclear(w: Mat, tau: float) -> Mat:
    """Singular value thresholding u diag(max(s - tau, 0)) vt."""
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    w = np.asarray(w, dtype=np.float64)
    if tau == 0.0:
        return w.copy()
    u, s, vt = svd(w)
    shrunk = np.maximum(s - tau, 0.0)
    r = int(np.count_nonzero(shrunk > 0.0))
    if r == 0:
        return np.zeros_like(w)
    return (u[:, :r] * shrunk[:r]) @ vt[:r]


def prox_params(spec: RegSpec, dual: ParamSet) -> ParamSet:
    """
    Blockwise prox of delta * R evaluated at delta * v.

    Group layers are row-thresholded with lam * sqrt(d^l), the nuclear layer
    is singular-value-thresholded with lam and biases pass through.
    """
    _check_layers(spec, len(dual.weights))
    if spec.lam == 0.0:
        return dual.copy()
    weights = []
    for layer, v in enumerate(dual.weights, start=1):
        scaled = spec.delta * v
        if layer == spec.nuclear_layer:
            weights.append(prox_nuclear(scaled, spec.threshold(layer)))
        else:
            weights.append(prox_group_rows(scaled, spec.threshold(layer)))
    return ParamSet(weights, [b.copy() for b in dual.biases])


def _check_layers(spec: RegSpec, n_layers: int) -> None:
    if n_layers != len(spec.row_group_weights):
        raise ShapeMismatchError("regularizer and parameters disagree on the number of layers",
                                 expected=(len(spec.row_group_weights),), actual=(n_layers,))
