"""
Snapshot generation for the three PDE examples and the POD baseline.

- 1D diffusion on [-1, 1], explicit finite differences, Dirichlet ends
- 1D advection on [0, 2), exact periodic transport of a Gaussian
- 2D lambda-omega reaction-diffusion on [-10, 10]^2, explicit Euler with
  mirrored ghost cells (Neumann)

Snapshots are stored as columns and are neither centered nor normalized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

from bregman_rom.exceptions import CFLViolationError, NonFiniteError, ShapeMismatchError, StabilityError
from bregman_rom.logging_config import get_logger
from bregman_rom.services.linalg import Mat, svd

logger = get_logger(__name__)

DIFFUSION_TRAIN_MU = (0.1, 0.5, 1.0)
DIFFUSION_TEST_MU = (0.6,)
ADVECTION_TRAIN_MU = (0.6, 0.9, 1.2)
ADVECTION_TEST_MU = (1.05,)

DIFFUSION_COURANT = 1.0 / 6.0
MAX_COURANT = 0.5
SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 100
QUADRATURE_NODES = 400

ADVECTION_CENTER = 0.2
ADVECTION_VARIANCE = 1e-3


@dataclass
class SnapshotSet:
    """Snapshot matrix (d^0 x N) with grid and parameter metadata."""
    equation: str
    split: str
    x: Mat
    grid: np.ndarray
    dx: float
    dt: float
    stride: int
    mu: np.ndarray
    times: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.x.ndim != 2:
            raise ShapeMismatchError("snapshot matrix must be two-dimensional", actual=self.x.shape)
        if self.mu.shape != (self.x.shape[1],) or self.times.shape != (self.x.shape[1],):
            raise ShapeMismatchError("one parameter value and time per snapshot column required",
                                     expected=(self.x.shape[1],), actual=self.mu.shape)
        if not np.all(np.isfinite(self.x)):
            raise NonFiniteError(f"{self.equation} {self.split} snapshots contain non-finite values")

    @property
    def n_snapshots(self) -> int:
        return int(self.x.shape[1])

    def metadata(self) -> dict:
        """JSON-compatible description written next to the snapshot matrix."""
        return {
            "equation": self.equation,
            "split": self.split,
            "rows": int(self.x.shape[0]),
            "cols": int(self.x.shape[1]),
            "grid": [float(v) for v in self.grid],
            "dx": float(self.dx),
            "dt": float(self.dt),
            "stride": int(self.stride),
            "mu": [float(v) for v in self.mu],
            "times": [float(v) for v in self.times],
            "extra": self.extra,
        }


@dataclass
class PodBasis:
    """Leading left singular vectors of a raw snapshot matrix."""
    modes: Mat
    singular_values: np.ndarray
    mean_free: bool = False

    @property
    def rank(self) -> int:
        return int(self.modes.shape[1])

    def project(self, x: Mat) -> Mat:
        """V V^T x."""
        return self.modes @ (self.modes.T @ x)


# ----------------------------------------------------------------------------
# 1D diffusion
# ----------------------------------------------------------------------------

def diffusion_initial_condition(grid: np.ndarray) -> np.ndarray:
    """g(x) = exp(-x^2 / 0.04) / sqrt(0.04 pi)."""
    return np.exp(-grid ** 2 / 0.04) / math.sqrt(0.04 * math.pi)


def evolve_diffusion(u0: np.ndarray, mu: float, dx: float, dt: float, n_steps: int) -> np.ndarray:
    """
    Explicit scheme u_i <- (1 - 2c) u_i + c (u_{i-1} + u_{i+1}), c = mu dt / dx^2,
    with both end values held at 0.

    Raises:
        StabilityError: c > 0.5
    """
    c = mu * dt / dx ** 2
    if c > MAX_COURANT:
        raise StabilityError(f"explicit diffusion step unstable (c={c:.4g} > {MAX_COURANT})", mu=mu, dt=dt, dx=dx)
    u = np.array(u0, dtype=np.float64)
    u[0] = 0.0
    u[-1] = 0.0
    for _ in range(n_steps):
        u[1:-1] = (1.0 - 2.0 * c) * u[1:-1] + c * (u[:-2] + u[2:])
    return u


def _diffusion_substeps(mu: float, dx: float, interval: float, dt: Optional[float]) -> Tuple[int, float]:
    """Substeps per stored interval and the step actually used."""
    if dt is not None:
        m = max(1, int(round(interval / dt)))
        if abs(m * dt - interval) > 1e-9 * interval:
            raise ValueError(f"time step {dt} does not divide the snapshot interval {interval}")
        return m, dt
    dt_max = DIFFUSION_COURANT * dx ** 2 / mu
    m = max(1, math.ceil(interval / dt_max - 1e-9))
    return m, interval / m


def gen_diffusion(
    mu_list: Sequence[float],
    n_x: int = 101,
    n_t: int = 5001,
    T: float = 1.0,
    stride: int = 20,
    dt: Optional[float] = None,
    split: str = "train",
) -> SnapshotSet:
    """
    Diffusion snapshots for every mu, concatenated in list order.

    Snapshots are stored every ``stride`` nominal steps of T / (n_t - 1),
    i.e. ceil(n_t / stride) columns per mu. Each trajectory is integrated
    with its own internal step (Courant number at most 1/6) unless ``dt`` is
    given.

    Raises:
        StabilityError: the requested ``dt`` violates c <= 0.5
    """
    grid = np.linspace(-1.0, 1.0, n_x)
    dx = 2.0 / (n_x - 1)
    interval = stride * T / (n_t - 1)
    n_store = math.ceil(n_t / stride)
    g = diffusion_initial_condition(grid)
    g[0] = 0.0
    g[-1] = 0.0

    columns, mus, times, solver_dt = [], [], [], []
    for mu in mu_list:
        m, step = _diffusion_substeps(mu, dx, interval, dt)
        c = mu * step / dx ** 2
        if c > MAX_COURANT:
            raise StabilityError(f"explicit diffusion step unstable (c={c:.4g} > {MAX_COURANT})",
                                 mu=mu, dt=step, dx=dx)
        u = g.copy()
        for j in range(n_store):
            if j > 0:
                u = evolve_diffusion(u, mu, dx, step, m)
            columns.append(u.copy())
            mus.append(mu)
            times.append(j * interval)
        solver_dt.append(step)
        logger.debug("diffusion_trajectory_generated", mu=mu, dt=step, courant=c, substeps=m)

    return SnapshotSet(
        equation="diffusion",
        split=split,
        x=np.column_stack(columns),
        grid=grid,
        dx=dx,
        dt=interval,
        stride=stride,
        mu=np.array(mus),
        times=np.array(times),
        extra={"solver_dt": solver_dt},
    )


def _diffusion_series_coefficients() -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_NODES)
    n = np.arange(1, SERIES_MAX_TERMS + 1)
    g = diffusion_initial_condition(nodes)
    phi = np.sin(np.outer(n, nodes + 1.0) * math.pi / 2.0)
    # the eigenfunctions have unit L2 norm on [-1, 1]
    return n, phi @ (weights * g)


def exact_diffusion(mu: float, t: float, grid: np.ndarray) -> np.ndarray:
    """
    Eigenfunction series sum_n c_n sin(n pi (x + 1) / 2) exp(-(n pi / 2)^2 mu t).

    Terms whose magnitude bound |c_n| exp(...) is below 1e-12 are dropped.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    grid = np.asarray(grid, dtype=np.float64)
    n, coeffs = _diffusion_series_coefficients()
    decay = np.exp(-(n * math.pi / 2.0) ** 2 * mu * t)
    terms = coeffs * decay
    keep = np.abs(terms) >= SERIES_TOL
    phi = np.sin(np.outer(grid + 1.0, n[keep]) * math.pi / 2.0)
    return phi @ terms[keep]


# ----------------------------------------------------------------------------
# 1D advection
# ----------------------------------------------------------------------------

def advection_profile(x: np.ndarray) -> np.ndarray:
    """Gaussian with mean 0.2 and variance 0.001."""
    return np.exp(-(x - ADVECTION_CENTER) ** 2 / (2.0 * ADVECTION_VARIANCE)) / math.sqrt(
        2.0 * math.pi * ADVECTION_VARIANCE)


def gen_advection(
    mu_list: Sequence[float],
    n_x: int = 256,
    n_t: int = 200,
    T: float = 1.0,
    split: str = "train",
) -> SnapshotSet:
    """Exact snapshots u_n(x) = g((x - mu n dt) mod 2), dt = T / n_t, n = 0..n_t-1."""
    grid = np.linspace(0.0, 2.0, n_x, endpoint=False)
    dt = T / n_t
    columns, mus, times = [], [], []
    for mu in mu_list:
        for step in range(n_t):
            t = step * dt
            columns.append(advection_profile(np.mod(grid - mu * t, 2.0)))
            mus.append(mu)
            times.append(t)
    return SnapshotSet(
        equation="advection",
        split=split,
        x=np.column_stack(columns),
        grid=grid,
        dx=2.0 / n_x,
        dt=dt,
        stride=1,
        mu=np.array(mus),
        times=np.array(times),
    )


# ----------------------------------------------------------------------------
# 2D reaction-diffusion
# ----------------------------------------------------------------------------

def neumann_pad(field2d: np.ndarray) -> np.ndarray:
    """Add one ghost layer mirrored about the boundary nodes (zero normal derivative)."""
    return np.pad(field2d, 1, mode="reflect")


def laplacian(field2d: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Five-point Laplacian with Neumann ghost cells."""
    p = neumann_pad(field2d)
    center = p[1:-1, 1:-1]
    return ((p[2:, 1:-1] + p[:-2, 1:-1] - 2.0 * center) / dx ** 2
            + (p[1:-1, 2:] + p[1:-1, :-2] - 2.0 * center) / dy ** 2)


def rotate_quarter(field2d: np.ndarray) -> np.ndarray:
    """Quarter-turn with column reversal: out[i, j] = field[j, n - 1 - i]."""
    return field2d[:, ::-1].T


def reaction_diffusion_initial_condition(n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid axis and the tanh spiral initial fields (u0, v0), indexed [x, y]."""
    axis = np.linspace(-10.0, 10.0, n)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    radius = np.sqrt(xx ** 2 + yy ** 2)
    angle = np.arctan2(yy, xx)
    u0 = np.tanh(radius * np.cos(angle - radius))
    v0 = np.tanh(radius * np.sin(angle - radius))
    return axis, u0, v0


def iterate_reaction_diffusion(
    n: int = 100,
    T2: float = 1.0,
    n_t: int = 50000,
    beta: float = 1.0,
    mu_u: float = 1.0,
    mu_v: float = 1.0,
    record_steps: Optional[Iterable[int]] = None,
) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
    """
    Explicit Euler for the lambda-omega system (r^2 = u^2 + v^2)

        u_t = mu_u lap(u) + (1 - r^2) u + beta r^2 v
        v_t = mu_v lap(v) + (1 - r^2) v - beta r^2 u

    yielding (step, u, v) for the requested step indices (0..n_t).

    Raises:
        CFLViolationError: dt * mu * (1/dx^2 + 1/dy^2) > 0.5
    """
    axis, u, v = reaction_diffusion_initial_condition(n)
    dx = dy = float(axis[1] - axis[0])
    dt = T2 / n_t
    mu = max(mu_u, mu_v)
    cfl = dt * mu * (1.0 / dx ** 2 + 1.0 / dy ** 2)
    if cfl > MAX_COURANT:
        raise CFLViolationError(f"reaction-diffusion CFL number {cfl:.4g} exceeds {MAX_COURANT}", mu=mu, dt=dt, dx=dx)

    wanted = sorted(set(record_steps)) if record_steps is not None else list(range(n_t + 1))
    if not wanted:
        return
    last = wanted[-1]
    if wanted[0] < 0 or last > n_t:
        raise ValueError(f"recorded steps must lie in [0, {n_t}]")
    pending = iter(wanted)
    target = next(pending)
    for k in range(last + 1):
        if k == target:
            yield k, u.copy(), v.copy()
            target = next(pending, None)
            if target is None:
                return
        r2 = u * u + v * v
        du = mu_u * laplacian(u, dx, dy) + (1.0 - r2) * u + beta * r2 * v
        dv = mu_v * laplacian(v, dx, dy) + (1.0 - r2) * v - beta * r2 * u
        u = u + dt * du
        v = v + dt * dv


def simulate_reaction_diffusion(
    n: int = 100,
    T2: float = 1.0,
    n_t: int = 50000,
    beta: float = 1.0,
    mu_u: float = 1.0,
    mu_v: float = 1.0,
    record_steps: Optional[Iterable[int]] = None,
) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """Both components at the requested steps."""
    return {k: (u, v) for k, u, v in iterate_reaction_diffusion(n, T2, n_t, beta, mu_u, mu_v, record_steps)}


def gen_reaction_diffusion(
    n: int = 100,
    T2: float = 1.0,
    n_t: int = 50000,
    beta: float = 1.0,
    mu_u: float = 1.0,
    mu_v: float = 1.0,
    transient_cut: int = 5000,
    stride: int = 36,
    train: int = 750,
    test: int = 250,
) -> Tuple[SnapshotSet, SnapshotSet]:
    """
    u-snapshots after the transient, every ``stride``-th step; the first
    ``train`` go to the training set and the next ``test`` to the test set.
    Fields are flattened row-major (index [x, y]).
    """
    total = train + test
    steps = [transient_cut + stride * j for j in range(total)]
    if steps[-1] > n_t:
        raise ValueError(f"{total} samples at stride {stride} after step {transient_cut} exceed {n_t} steps")
    axis = np.linspace(-10.0, 10.0, n)
    dx = float(axis[1] - axis[0])
    dt = T2 / n_t

    columns, times = [], []
    for k, u, _ in iterate_reaction_diffusion(n, T2, n_t, beta, mu_u, mu_v, steps):
        columns.append(u.reshape(-1))
        times.append(k * dt)
    x = np.column_stack(columns)
    times = np.array(times)
    mu = np.full(total, mu_u)
    extra = {"beta": beta, "mu_v": mu_v, "transient_cut": transient_cut, "n_t": n_t}
    logger.info("reaction_diffusion_generated", n=n, samples=total, dt=dt)

    def _split(name: str, cols: slice) -> SnapshotSet:
        return SnapshotSet(equation="reaction_diffusion", split=name, x=x[:, cols], grid=axis, dx=dx,
                           dt=stride * dt, stride=stride, mu=mu[cols], times=times[cols], extra=dict(extra))

    return _split("train", slice(0, train)), _split("test", slice(train, total))


# ----------------------------------------------------------------------------
# POD baseline
# ----------------------------------------------------------------------------

def _matrix(x) -> Mat:
    return x.x if isinstance(x, SnapshotSet) else np.asarray(x, dtype=np.float64)


def pod(x, r: Optional[int] = None, tol: Optional[float] = None) -> PodBasis:
    """
    POD basis of the raw snapshot matrix.

    Exactly one of ``r`` (number of modes) or ``tol`` is required. ``tol``
    bounds the relative reconstruction loss ||X - V V^T X||_F^2 / ||X||_F^2
    (the relative value of pod_loss); the smallest sufficient rank is chosen.
    """
    data = _matrix(x)
    if (r is None) == (tol is None):
        raise ValueError("exactly one of r or tol is required")
    u, s, _ = svd(data)
    if r is not None:
        if not 1 <= r <= len(s):
            raise ValueError(f"rank {r} outside [1, {len(s)}]")
    else:
        if tol < 0:
            raise ValueError(f"tolerance must be nonnegative, got {tol}")
        energy = s ** 2
        total = float(np.sum(energy))
        if total == 0.0:
            r = 1
        else:
            # tail[i] = relative loss when keeping i + 1 modes
            remaining = np.append(np.cumsum(energy[::-1])[::-1][1:], 0.0)
            tail = remaining / total
            r = int(np.argmax(tail <= tol)) + 1 if np.any(tail <= tol) else len(s)
    return PodBasis(modes=u[:, :r].copy(), singular_values=s)


def pod_error(basis: PodBasis, x) -> float:
    """||X - V V^T X||_F / ||X||_F."""
    data = _matrix(x)
    norm = np.linalg.norm(data)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(data - basis.project(data)) / norm)


def pod_loss(basis: PodBasis, x) -> Tuple[float, float]:
    """Mean squared projection error per snapshot, absolute and relative to the mean squared norm."""
    data = _matrix(x)
    residual = data - basis.project(data)
    absolute = float(np.sum(residual * residual) / data.shape[1])
    scale = float(np.sum(data * data) / data.shape[1])
    return absolute, absolute / scale if scale > 0 else 0.0
