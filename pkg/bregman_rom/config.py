"""
Configuration management using Pydantic Settings.

Process-wide knobs come from environment variables (or a .env file); per-run
experiment settings come from a flat JSON file that CLI flags override.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from bregman_rom.exceptions import ConfigurationError
from bregman_rom.models import Equation, OptimizerKind


class Settings(BaseSettings):
    """Process settings with environment variable support."""

    # Artifact locations
    data_dir: Path = Field(default=Path("data"), description="Directory holding snapshot files")
    out_dir: Path = Field(default=Path("runs"), description="Directory for models, metrics and reports")
    metrics_file: str = Field(default="bregman_rom.prom", description="Prometheus text file written per command")

    # Execution
    threads: int = Field(default=1, description="Maximum concurrent training runs in a sweep")
    record_wall_time: bool = Field(
        default=False,
        description="Write measured epoch wall time to metrics CSVs (breaks byte-identical reruns)"
    )

    # Numerics
    svd_backend: str = Field(default="lapack", description="SVD backend: lapack or jacobi")
    lipschitz_max_samples: int = Field(default=256, description="Latent samples used by the Jacobian estimate")
    reaction_diffusion_grid: int = Field(default=32, description="Grid points per axis for reaction-diffusion data")

    # Logging
    debug: bool = Field(default=False, description="Enable debug logging")
    log_json: bool = Field(default=True, description="Render logs as JSON")

    @field_validator("threads", "lipschitz_max_samples", "reaction_diffusion_grid")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        """Counts must be positive."""
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("svd_backend")
    @classmethod
    def validate_svd_backend(cls, v: str) -> str:
        """Only the two implemented backends are accepted."""
        v = v.lower()
        if v not in ("lapack", "jacobi"):
            raise ValueError("svd_backend must be 'lapack' or 'jacobi'")
        return v

    class Config:
        env_prefix = "BREGMAN_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False


class EquationPreset(BaseModel):
    """Architecture and loop defaults for one dataset."""
    model_config = ConfigDict(frozen=True)

    layer_sizes: Tuple[int, ...]
    l_enc: int
    batch_size: int
    epochs: int


def equation_preset(equation: Equation, grid: Optional[int] = None) -> EquationPreset:
    """Return the architecture and loop defaults used for ``equation``."""
    if equation == Equation.DIFFUSION:
        return EquationPreset(layer_sizes=(101, 50, 25, 5, 25, 50, 101), l_enc=3, batch_size=64, epochs=5000)
    if equation == Equation.ADVECTION:
        return EquationPreset(layer_sizes=(256, 128, 50, 30, 50, 128, 256), l_enc=3, batch_size=32, epochs=1000)
    n = grid or settings.reaction_diffusion_grid
    d0 = n * n
    return EquationPreset(layer_sizes=(d0, 200, 100, 10, 100, 200, d0), l_enc=3, batch_size=32, epochs=1000)


# (eta, lambda) chosen in the hyperparameter sweeps for each dataset
HYPERPARAMETERS: Dict[Equation, Dict[OptimizerKind, Tuple[float, float]]] = {
    Equation.DIFFUSION: {
        OptimizerKind.SGD: (5e-5, 0.0),
        OptimizerKind.ADAM: (1.5e-3, 0.0),
        OptimizerKind.LINBREG: (1e-3, 1.0),
        OptimizerKind.ADABREG: (4e-3, 1.0),
    },
    Equation.ADVECTION: {
        OptimizerKind.SGD: (4.5e-5, 0.0),
        OptimizerKind.ADAM: (1e-3, 0.0),
        OptimizerKind.LINBREG: (6e-5, 0.01),
        OptimizerKind.ADABREG: (1.4e-3, 0.1),
    },
    Equation.REACTION_DIFFUSION: {
        OptimizerKind.SGD: (4e-8, 0.0),
        OptimizerKind.ADAM: (1.5e-3, 0.0),
        OptimizerKind.LINBREG: (2e-6, 0.1),
        OptimizerKind.ADABREG: (2e-3, 0.1),
    },
}


class ExperimentConfig(BaseModel):
    """Configuration of one training run (or the template of a sweep)."""
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    equation: Equation = Equation.DIFFUSION
    arch: Optional[List[int]] = Field(None, description="Layer sizes override")
    l_enc: Optional[int] = Field(None, description="1-based index of the encoder's last layer")
    optimizer: OptimizerKind = OptimizerKind.ADABREG
    eta: Optional[float] = Field(None, description="Learning rate")
    lam: Optional[float] = Field(None, alias="lambda", description="Regularization constant")
    init_density: float = Field(default=0.2, description="Fraction of nonzero rows at initialization")
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    seed: int = 0
    seeds: int = Field(default=1, description="Number of consecutive seeds; the best test loss wins")
    c_tol: float = Field(default=0.01, description="Latent truncation tolerance relative to the loss")
    name: Optional[str] = Field(None, description="Artifact name stem")
    data_dir: Optional[Path] = None
    out_dir: Optional[Path] = None

    @field_validator("eta")
    @classmethod
    def validate_eta(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not v > 0:
            raise ValueError("eta must be positive")
        return v

    @field_validator("lam")
    @classmethod
    def validate_lambda(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v < 0:
            raise ValueError("lambda must be nonnegative")
        return v

    @field_validator("init_density")
    @classmethod
    def validate_density(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("init_density must lie in (0, 1]")
        return v

    @field_validator("epochs")
    @classmethod
    def validate_epochs(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 0:
            raise ValueError("epochs must be nonnegative")
        return v

    @field_validator("batch_size", "seeds")
    @classmethod
    def validate_counts(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("c_tol")
    @classmethod
    def validate_c_tol(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("c_tol must be positive")
        return v

    @model_validator(mode="after")
    def apply_presets(self) -> "ExperimentConfig":
        """Fill unset fields from the dataset presets and pin SGD/Adam to dense, unregularized runs."""
        preset = equation_preset(self.equation)
        if self.arch is None:
            self.arch = list(preset.layer_sizes)
            if self.l_enc is None:
                self.l_enc = preset.l_enc
        if self.l_enc is None:
            self.l_enc = (len(self.arch) - 1) // 2
        if self.batch_size is None:
            self.batch_size = preset.batch_size
        if self.epochs is None:
            self.epochs = preset.epochs
        eta, lam = HYPERPARAMETERS[self.equation][self.optimizer]
        if self.eta is None:
            self.eta = eta
        if self.lam is None:
            self.lam = lam
        if not self.optimizer.is_bregman:
            self.init_density = 1.0
            self.lam = 0.0
        return self

    @property
    def run_name(self) -> str:
        """Artifact name stem."""
        return self.name or f"{self.equation.value}_{self.optimizer.value}"

    def resolved_data_dir(self) -> Path:
        return Path(self.data_dir) if self.data_dir is not None else settings.data_dir

    def resolved_out_dir(self) -> Path:
        return Path(self.out_dir) if self.out_dir is not None else settings.out_dir


def load_experiment_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Build an ExperimentConfig from a flat JSON file and CLI overrides.

    Overrides whose value is None are ignored so that unset flags fall back to
    the file, then to the presets.

    Raises:
        ConfigurationError: unreadable file or invalid values
    """
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"Cannot read config file {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"Config file {path} must hold a JSON object")
        values.update(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid experiment configuration: {exc}") from exc


def load_settings() -> Settings:
    """
    Load settings.
    Priority: Environment variables > .env file > defaults
    """
    return Settings()


# Global settings instance
settings = load_settings()
