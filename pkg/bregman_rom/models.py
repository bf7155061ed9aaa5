"""
Pydantic models for configuration enums, run records and reports.
"""
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class Equation(str, Enum):
    """Snapshot datasets that can be generated."""
    DIFFUSION = "diffusion"
    ADVECTION = "advection"
    REACTION_DIFFUSION = "reaction_diffusion"


class OptimizerKind(str, Enum):
    """Optimizers sharing the step interface."""
    SGD = "sgd"
    ADAM = "adam"
    LINBREG = "linbreg"
    ADABREG = "adabreg"

    @property
    def is_bregman(self) -> bool:
        """Whether the optimizer keeps a dual variable and applies the prox."""
        return self in (OptimizerKind.LINBREG, OptimizerKind.ADABREG)

    @property
    def uses_moments(self) -> bool:
        """Whether the optimizer keeps Adam moment estimates."""
        return self in (OptimizerKind.ADAM, OptimizerKind.ADABREG)


METRICS_COLUMNS = (
    "epoch",
    "train_loss",
    "test_loss",
    "reg_value",
    "weight_density",
    "nonzero_weights",
    "latent_dim",
    "wall_time_s",
)


class MetricsRecord(BaseModel):
    """Per-epoch training metrics (one CSV row)."""
    model_config = ConfigDict(frozen=True)

    epoch: int = Field(..., ge=0)
    train_loss: float
    test_loss: float
    reg_value: float
    weight_density: float = Field(..., ge=0.0, le=1.0)
    nonzero_weights: int = Field(..., ge=0)
    effective_latent_dim: int = Field(..., ge=0)
    wall_time_s: float = 0.0
    diverged: bool = Field(default=False, description="Terminal divergence marker")

    def csv_row(self) -> list[str]:
        """Render the record in METRICS_COLUMNS order with round-trip float formatting."""
        return [
            str(self.epoch),
            repr(float(self.train_loss)),
            repr(float(self.test_loss)),
            repr(float(self.reg_value)),
            repr(float(self.weight_density)),
            str(self.nonzero_weights),
            str(self.effective_latent_dim),
            repr(float(self.wall_time_s)),
        ]


class LipschitzMethod(str, Enum):
    """Which certificate produced the decoder Lipschitz estimate."""
    UPPER_BOUND = "upper_bound"
    JACOBIAN = "jacobian"


class PostprocReport(BaseModel):
    """Outcome of latent truncated SVD followed by bias propagation."""
    c_tol: float
    eps_used: float
    lipschitz_estimate: float
    lipschitz_method: LipschitzMethod
    lipschitz_upper_bound: float
    lipschitz_jacobian: float
    latent_dim_before: int
    latent_dim_after: int
    params_before: int
    params_after: int
    train_loss_before: float
    train_loss_after: float
    test_loss_before: Optional[float] = None
    test_loss_after: Optional[float] = None


class SweepRow(BaseModel):
    """One run of a hyperparameter sweep."""
    eta: float
    lam: float
    seed: int
    status: str
    epochs_completed: int = 0
    train_loss: Optional[float] = None
    test_loss: Optional[float] = None
    reg_value: Optional[float] = None
    weight_density: Optional[float] = None
    nonzero_weights: Optional[int] = None
    latent_dim: Optional[int] = None
    post_latent_dim: Optional[int] = None
    post_params: Optional[int] = None
    error: Optional[str] = None
    best: bool = False
    best_sparse: bool = False


SWEEP_COLUMNS = tuple(SweepRow.model_fields.keys())


class TrainSummary(BaseModel):
    """Result of the train command (the selected seed's retained model)."""
    equation: str
    optimizer: str
    eta: float
    lam: float
    init_density: float
    seed: int
    seeds_tried: int
    epochs: int
    best_epoch: int
    train_loss: float
    test_loss: float
    nonzero_weights: int
    dense_weights: int
    latent_dim: int
    model_path: str
    metrics_path: str


class EvaluationSummary(BaseModel):
    """Losses and size of a stored model."""
    train_loss: float
    test_loss: Optional[float] = None
    nonzero_weights: int
    weight_density: float
    latent_dim: int
    latent_rank: int
    layer_sizes: list[int]


class PodSummary(BaseModel):
    """POD baseline on a train/test pair."""
    rank: int
    singular_values: list[float]
    train_error: float
    train_loss: float
    train_relative_loss: float
    test_error: Optional[float] = None
    test_loss: Optional[float] = None
    test_relative_loss: Optional[float] = None
