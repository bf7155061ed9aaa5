"""
Pytest configuration and fixtures.
"""
import numpy as np
import pytest

from bregman_rom.config import Settings
from bregman_rom.models import Equation
from bregman_rom.services.autoencoder import Architecture, MlpAutoencoder, init_dense, sparsify_rows, spectral_sparsify
from bregman_rom.services.experiment import data_paths
from bregman_rom.services.pde_data import SnapshotSet
from bregman_rom.services.persistence import save_snapshots


# ============================================
# TEST CONFIGURATION
# ============================================

@pytest.fixture
def test_settings(tmp_path):
    """Create test settings pointing at a temporary directory."""
    return Settings(
        data_dir=tmp_path / "data",
        out_dir=tmp_path / "runs",
        threads=2,
        debug=True,
        log_json=False,
    )


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(20240611)


# ============================================
# MODEL FIXTURES
# ============================================

@pytest.fixture
def small_arch():
    """Small autoencoder (6, 4, 2, 4, 6) with a linear latent layer 2."""
    return Architecture(layer_sizes=(6, 4, 2, 4, 6), l_enc=2)


@pytest.fixture
def diffusion_arch():
    """Architecture used for the 1D diffusion data."""
    return Architecture(layer_sizes=(101, 50, 25, 5, 25, 50, 101), l_enc=3)


@pytest.fixture
def small_model(small_arch):
    """Dense small model."""
    return init_dense(small_arch, seed=7)


@pytest.fixture
def random_model(rng):
    """Factory for models with Gaussian weights and signed biases."""
    def _make(sizes=(6, 4, 2, 4, 6), l_enc=2, scale=0.7):
        weights = [scale * rng.standard_normal((d_out, d_in)) for d_in, d_out in zip(sizes[:-1], sizes[1:])]
        biases = [0.3 * rng.standard_normal(d_out) for d_out in sizes[1:]]
        return MlpAutoencoder(weights, biases, l_enc)
    return _make


@pytest.fixture
def sparse_model_factory():
    """Factory for sparsely initialized models as used by the Bregman optimizers."""
    def _make(sizes=(8, 6, 3, 6, 8), l_enc=2, p=0.5, seed=0):
        arch = Architecture(layer_sizes=sizes, l_enc=l_enc)
        model = sparsify_rows(init_dense(arch, seed), p, seed)
        return spectral_sparsify(model)
    return _make


# ============================================
# DATA FIXTURES
# ============================================

@pytest.fixture
def low_rank_data(rng):
    """Snapshot matrix (6 x 40) of rank 3 plus a constant offset."""
    basis = rng.standard_normal((6, 3))
    coeffs = rng.standard_normal((3, 40))
    return basis @ coeffs + 0.5


@pytest.fixture
def snapshot_pair(rng):
    """Small train/test snapshot sets on a 6-point grid."""
    def _make(cols, split):
        x = np.sin(np.outer(np.arange(1, 7), np.linspace(0.0, 1.0, cols))) + 0.1 * rng.standard_normal((6, cols))
        return SnapshotSet(
            equation="diffusion",
            split=split,
            x=x,
            grid=np.linspace(-1.0, 1.0, 6),
            dx=0.4,
            dt=0.01,
            stride=1,
            mu=np.full(cols, 0.5),
            times=np.arange(cols) * 0.01,
        )
    return _make(40, "train"), _make(12, "test")


@pytest.fixture
def dataset_dir(tmp_path, snapshot_pair):
    """Small train/test snapshot files stored under the diffusion names."""
    data_dir = tmp_path / "data"
    train_path, test_path = data_paths(data_dir, Equation.DIFFUSION)
    save_snapshots(snapshot_pair[0], train_path)
    save_snapshots(snapshot_pair[1], test_path)
    return data_dir
