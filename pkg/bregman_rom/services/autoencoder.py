"""
Dense feed-forward autoencoder with manual backpropagation.

Layers are numbered 1..L as in the network description; ``weights[l - 1]`` is
W^l with shape (d^l, d^{l-1}). The encoder is layers 1..l_enc, the decoder
l_enc+1..L. Batches are stored column-wise (d^0 x B).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from bregman_rom.exceptions import NonFiniteError, ShapeMismatchError
from bregman_rom.services.linalg import Mat, singular_values, svd

# Independent random streams derived from the run seed
INIT_STREAM = 1
SPARSIFY_STREAM = 2

LATENT_RANK_RTOL = 1e-12

# metadata key holding the layer sizes a model was initialized with
DENSE_SIZES_KEY = "dense_layer_sizes"


class Architecture(BaseModel):
    """Layer sizes (d^0, ..., d^L) and the 1-based index of the encoder's last layer."""
    model_config = ConfigDict(frozen=True)

    layer_sizes: Tuple[int, ...]
    l_enc: int

    @field_validator("layer_sizes")
    @classmethod
    def validate_sizes(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(v) < 3:
            raise ValueError("an autoencoder needs at least two layers")
        if any(d < 1 for d in v):
            raise ValueError("layer sizes must be positive")
        if v[0] != v[-1]:
            raise ValueError(f"input width {v[0]} differs from output width {v[-1]}")
        return tuple(int(d) for d in v)

    @model_validator(mode="after")
    def validate_l_enc(self) -> "Architecture":
        if not 1 <= self.l_enc < self.n_layers:
            raise ValueError(f"l_enc must lie in [1, {self.n_layers - 1}], got {self.l_enc}")
        return self

    @property
    def n_layers(self) -> int:
        """Number of affine layers L."""
        return len(self.layer_sizes) - 1

    @property
    def latent_width(self) -> int:
        return self.layer_sizes[self.l_enc]

    def dense_weight_count(self) -> int:
        """Weight entries of the dense network (biases excluded)."""
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] for i in range(self.n_layers))


@dataclass
class ParamSet:
    """Parameter-shaped collection: gradients, dual variables and moments all use it."""
    weights: List[Mat]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, other: "ParamSet") -> "ParamSet":
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> Iterator[np.ndarray]:
        yield from self.weights
        yield from self.biases

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def shapes(self) -> List[Tuple[int, ...]]:
        return [a.shape for a in self.arrays()]


@dataclass
class MlpAutoencoder:
    """Autoencoder parameters; widths follow the current weight shapes."""
    weights: List[Mat]
    biases: List[np.ndarray]
    l_enc: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeMismatchError("weights and biases disagree on the number of layers",
                                     expected=(len(self.weights),), actual=(len(self.biases),))
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatchError(f"layer {idx + 1} bias does not match weight rows",
                                         expected=(w.shape[0],), actual=b.shape)
            if idx > 0 and w.shape[1] != self.weights[idx - 1].shape[0]:
                raise ShapeMismatchError(f"layer {idx + 1} input width does not match layer {idx} output",
                                         expected=(self.weights[idx - 1].shape[0],), actual=(w.shape[1],))
        # validates l_enc and the autoencoder shape
        Architecture(layer_sizes=self.layer_sizes, l_enc=self.l_enc)

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def arch(self) -> Architecture:
        return Architecture(layer_sizes=self.layer_sizes, l_enc=self.l_enc)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> ParamSet:
        """Parameters as a ParamSet sharing this model's arrays."""
        return ParamSet(self.weights, self.biases)

    def with_params(self, params: ParamSet) -> "MlpAutoencoder":
        return MlpAutoencoder(list(params.weights), list(params.biases), self.l_enc, dict(self.metadata))

    def copy(self) -> "MlpAutoencoder":
        return self.with_params(self.params().copy())


@dataclass
class ForwardTape:
    """Backprop cache: pre[l-1] = W^l a^{l-1} + b^l, post[l] = sigma_l(pre[l-1]), post[0] = input."""
    pre: List[Mat]
    post: List[Mat]


def activation_plan(arch: Architecture) -> Tuple[bool, ...]:
    """
    ReLU flags per layer 1..L.

    The latent layer l_enc and the output layer L are linear, every other
    layer applies ReLU.
    """
    L = arch.n_layers
    return tuple(not (layer == arch.l_enc or layer == L) for layer in range(1, L + 1))


def _as_batch(batch, width: int) -> Mat:
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != width:
        raise ShapeMismatchError("batch rows must equal the input width", expected=(width,), actual=arr.shape)
    return arr


def _run_layers(weights: List[Mat], biases: List[np.ndarray], flags, x: Mat,
                tape: Optional[ForwardTape] = None) -> Mat:
    a = x
    for w, b, relu in zip(weights, biases, flags):
        z = w @ a + b[:, None]
        a = np.maximum(z, 0.0) if relu else z
        if tape is not None:
            tape.pre.append(z)
            tape.post.append(a)
    return a


def forward(model: MlpAutoencoder, batch) -> Tuple[Mat, ForwardTape]:
    """Reconstruct ``batch`` (d^0 x B) and return the intermediates."""
    x = _as_batch(batch, model.layer_sizes[0])
    tape = ForwardTape(pre=[], post=[x])
    out = _run_layers(model.weights, model.biases, activation_plan(model.arch), x, tape)
    return out, tape


def encode(model: MlpAutoencoder, batch) -> Mat:
    """Apply layers 1..l_enc."""
    x = _as_batch(batch, model.layer_sizes[0])
    k = model.l_enc
    return _run_layers(model.weights[:k], model.biases[:k], activation_plan(model.arch)[:k], x)


def decode(model: MlpAutoencoder, latent) -> Mat:
    """Apply layers l_enc+1..L."""
    k = model.l_enc
    z = _as_batch(latent, model.layer_sizes[k])
    return _run_layers(model.weights[k:], model.biases[k:], activation_plan(model.arch)[k:], z)


def loss_and_grad(model: MlpAutoencoder, batch, epoch: Optional[int] = None,
                  batch_index: Optional[int] = None) -> Tuple[float, ParamSet]:
    """
    Mean squared reconstruction error over the batch columns and its gradient.

    Args:
        model: current parameters
        batch: snapshots (d^0 x B), B >= 1
        epoch: epoch number attached to errors
        batch_index: batch number attached to errors

    Returns:
        (loss, gradient ParamSet)

    Raises:
        NonFiniteError: loss or gradient is NaN/Inf
    """
    x = _as_batch(batch, model.layer_sizes[0])
    n = x.shape[1]
    if n == 0:
        raise ShapeMismatchError("batch must contain at least one column", actual=x.shape)
    flags = activation_plan(model.arch)
    out, tape = forward(model, x)
    residual = out - x
    loss = float(np.sum(residual * residual) / n)
    if not math.isfinite(loss):
        raise NonFiniteError("non-finite loss", epoch=epoch, batch=batch_index)

    grad_w: List[Mat] = [None] * model.n_layers
    grad_b: List[np.ndarray] = [None] * model.n_layers
    delta = (2.0 / n) * residual
    for idx in range(model.n_layers - 1, -1, -1):
        grad_w[idx] = delta @ tape.post[idx].T
        grad_b[idx] = delta.sum(axis=1)
        if idx > 0:
            delta = model.weights[idx].T @ delta
            if flags[idx - 1]:
                delta = delta * (tape.pre[idx - 1] > 0.0)
    grads = ParamSet(grad_w, grad_b)
    if not grads.all_finite():
        raise NonFiniteError("non-finite gradient", epoch=epoch, batch=batch_index)
    return loss, grads


def reconstruction_loss(model: MlpAutoencoder, x) -> float:
    """Mean over columns of ||u - phi(u)||^2."""
    data = _as_batch(x, model.layer_sizes[0])
    out, _ = forward(model, data)
    residual = out - data
    return float(np.sum(residual * residual) / data.shape[1])


def init_dense(arch: Architecture, seed: int) -> MlpAutoencoder:
    """
    Dense initialization: W^l ~ U(-sqrt(6)/d^{l-1}, sqrt(6)/d^{l-1}) and strictly
    positive biases b^l ~ U(0, 1/d^{l-1}).
    """
    rng = np.random.default_rng([seed, INIT_STREAM])
    weights, biases = [], []
    sizes = arch.layer_sizes
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0) / d_in
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        # 1 - U[0, 1) lies in (0, 1]
        biases.append((1.0 - rng.random(d_out)) / d_in)
    return MlpAutoencoder(weights, biases, arch.l_enc, {DENSE_SIZES_KEY: list(sizes)})


def zero_row_count(rows: int, p: float) -> int:
    """Rows to zero for target row density ``p``; at least one row survives."""
    return min(math.ceil(rows * (1.0 - p) - 1e-9), rows - 1)


def sparsify_rows(model: MlpAutoencoder, p: float, seed: int) -> MlpAutoencoder:
    """Zero uniformly chosen rows of every weight matrix except the latent layer's."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"row density must lie in (0, 1], got {p}")
    rng = np.random.default_rng([seed, SPARSIFY_STREAM])
    result = model.copy()
    for layer, w in enumerate(result.weights, start=1):
        if layer == result.l_enc:
            continue
        k = zero_row_count(w.shape[0], p)
        if k <= 0:
            continue
        rows = rng.choice(w.shape[0], size=k, replace=False)
        w[rows, :] = 0.0
    return result


def spectral_sparsify(model: MlpAutoencoder) -> MlpAutoencoder:
    """Replace W^{l_enc} by its best rank-1 approximation s_1 u_1 v_1^T."""
    result = model.copy()
    idx = result.l_enc - 1
    u, s, vt = svd(result.weights[idx])
    result.weights[idx] = s[0] * np.outer(u[:, 0], vt[0])
    return result


def count_nonzero_weights(model: MlpAutoencoder) -> int:
    """Weight entries that are exactly nonzero; biases are not counted."""
    return int(sum(np.count_nonzero(w) for w in model.weights))


def dense_arch(model: MlpAutoencoder) -> Architecture:
    """Architecture the model was initialized with (current shapes when unrecorded)."""
    sizes = model.metadata.get(DENSE_SIZES_KEY)
    if sizes is None:
        return model.arch
    return Architecture(layer_sizes=tuple(sizes), l_enc=model.l_enc)


def density(model: MlpAutoencoder) -> float:
    """Nonzero weights over the weight count of the dense initial architecture."""
    return count_nonzero_weights(model) / dense_arch(model).dense_weight_count()


def effective_latent_dim(model: MlpAutoencoder) -> int:
    """Current row count of W^{l_enc}."""
    return int(model.weights[model.l_enc - 1].shape[0])


def latent_rank(model: MlpAutoencoder) -> int:
    """Numerical rank of W^{l_enc}: singular values above 1e-12 * s_1."""
    s = singular_values(model.weights[model.l_enc - 1])
    if s[0] <= 0.0:
        return 0
    return int(np.count_nonzero(s > LATENT_RANK_RTOL * s[0]))
