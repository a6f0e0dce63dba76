"""
Echo-state-network forecasters.

State recurrence:  r_t = (1 - a) r_{t-1} + a * tanh(W_res r_{t-1} + W_in x_t + b)
Readout:           x_hat_{t+1} = r_t @ W_out, fitted by ridge regression on
                   teacher-forced states against the next observation.
Horizon-k forecasts are produced by feeding outputs back as inputs.
"""
import os
import json
import logging
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigs

import artifacts
import config
from config import GridAxes
from dynamics import Trajectory
from errors import (
    ChaosRashomonError,
    ConfigError,
    PoolError,
    PreconditionError,
    ReadoutError,
    RolloutDivergedError,
    ShapeError,
    SpectralRadiusError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Trajectory]


@dataclass(frozen=True)
class ReservoirConfig:
    n_r: int
    rho: float
    sparsity_p: float
    leak_alpha: float
    input_scale: float = config.RESERVOIR.input_scale
    bias_std: float = config.RESERVOIR.bias_std
    ridge_lambda: float = config.RESERVOIR.ridge_lambda
    washout: int = config.RESERVOIR.washout
    seed: int = 0
    window_w: int = config.RESERVOIR.warmup

    def __post_init__(self) -> None:
        if self.n_r < 1:
            raise ConfigError(f"n_r must be >= 1, got {self.n_r}")
        if not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if not 0 < self.sparsity_p <= 1:
            raise ConfigError(f"sparsity_p must lie in (0, 1], got {self.sparsity_p}")
        if not 0 < self.leak_alpha <= 1:
            raise ConfigError(f"leak_alpha must lie in (0, 1], got {self.leak_alpha}")
        if not self.ridge_lambda > 0:
            raise ConfigError(f"ridge_lambda must be positive, got {self.ridge_lambda}")
        if self.washout < 0:
            raise ConfigError(f"washout must be >= 0, got {self.washout}")
        if self.input_scale < 0 or self.bias_std < 0:
            raise ConfigError("input_scale and bias_std must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ReservoirConfig":
        try:
            return cls(**payload)
        except TypeError as e:
            raise ConfigError(f"bad reservoir config: {e}") from e


@dataclass(frozen=True, eq=False)
class ReservoirModel:
    """Immutable once built; `train_readout` returns a new instance with w_out set."""
    config: ReservoirConfig
    w_res: sp.csr_matrix
    w_in: np.ndarray
    bias: np.ndarray
    input_dim: int
    w_out: Optional[np.ndarray] = None
    _w_dense: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.w_in.shape != (self.config.n_r, self.input_dim):
            raise ShapeError(f"w_in has shape {self.w_in.shape}, expected {(self.config.n_r, self.input_dim)}")
        density = self.w_res.nnz / float(self.config.n_r ** 2)
        if self._w_dense is None and density >= config.RESERVOIR.dense_threshold:
            object.__setattr__(self, "_w_dense", self.w_res.toarray())

    @property
    def trained(self) -> bool:
        return self.w_out is not None

    def recurrent(self, states: np.ndarray) -> np.ndarray:
        """Row-wise W_res r for a (B, n_r) batch of states."""
        if self._w_dense is not None:
            return states @ self._w_dense.T
        return np.asarray((self.w_res @ states.T).T)

    def advance(self, states: np.ndarray, drive: np.ndarray) -> np.ndarray:
        """One recurrence step; `drive` is W_in x_t + b for every row."""
        a = self.config.leak_alpha
        activation = np.tanh(self.recurrent(states) + drive)
        if a == 1.0:
            return activation
        return (1.0 - a) * states + a * activation

    def input_drive(self, inputs: np.ndarray) -> np.ndarray:
        return inputs @ self.w_in.T + self.bias


@dataclass
class ModelPool:
    """
    Ordered pool; models[i] is None when building or training config i failed,
    with the reason kept in statuses[i].
    """
    models: List[Optional[ReservoirModel]]
    configs: List[ReservoirConfig]
    statuses: List[str]
    master_seed: int
    grid: Optional[GridAxes] = None

    def __len__(self) -> int:
        return len(self.models)

    @property
    def trained_indices(self) -> List[int]:
        return [i for i, model in enumerate(self.models) if model is not None]


def model_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def enumerate_grid(axes: Union[GridAxes, Dict[str, Sequence[Any]]], **overrides: Any) -> List[ReservoirConfig]:
    """Cartesian product in (n_r, rho, sparsity_p, leak_alpha) order."""
    if isinstance(axes, GridAxes):
        axes = axes.to_dict()
    names = ("n_r", "rho", "sparsity_p", "leak_alpha")
    unknown = set(axes) - set(names)
    if unknown:
        raise ConfigError(f"unknown grid axes: {sorted(unknown)}")
    values = []
    for name in names:
        axis = list(axes.get(name, []))
        if not axis:
            raise ConfigError(f"grid axis '{name}' is empty")
        values.append(axis)
    return [
        ReservoirConfig(n_r=int(n_r), rho=float(rho), sparsity_p=float(p), leak_alpha=float(a), **overrides)
        for n_r, rho, p, a in itertools.product(*values)
    ]


def _power_iteration(w: sp.csr_matrix, iterations: int, tolerance: float) -> Optional[float]:
    """Dominant eigenvalue magnitude from the two-step growth ratio, None if unconverged."""
    n = w.shape[0]
    v = np.ones(n) / np.sqrt(n)
    estimate = None
    previous_change = None
    settled = 0
    for _ in range(iterations):
        w1 = w @ v
        w2 = w @ w1
        norm_v = np.linalg.norm(v)
        norm_w2 = np.linalg.norm(w2)
        if norm_w2 == 0.0:
            return 0.0
        current = np.sqrt(norm_w2 / norm_v)
        if estimate is not None:
            change = abs(current - estimate)
            # geometric tail bound on the remaining error
            ratio = change / previous_change if previous_change else 1.0
            if change == 0.0:
                tail = 0.0
            else:
                tail = change * ratio / (1.0 - ratio) if ratio < 1.0 else np.inf
            if change <= tolerance * current and tail <= tolerance * current:
                settled += 1
                if settled >= 5:
                    return current
            else:
                settled = 0
            previous_change = change
        estimate = current
        v = w2 / norm_w2
    return None


def spectral_radius(w: sp.csr_matrix) -> float:
    n = w.shape[0]
    if w.nnz == 0:
        return 0.0
    radius = _power_iteration(w, config.RESERVOIR.power_iterations, config.RESERVOIR.power_tolerance)
    if radius is not None:
        return float(radius)
    if n > 16:
        try:
            values = eigs(w, k=1, which="LM", v0=np.ones(n), tol=0, return_eigenvectors=False)
            return float(np.abs(values).max())
        except (ArpackNoConvergence, ArpackError) as e:
            logger.debug("ARPACK did not converge (n=%d): %s; using dense eigenvalues", n, e)
    return float(np.abs(np.linalg.eigvals(w.toarray())).max())


def build_reservoir(cfg: ReservoirConfig, input_dim: int) -> ReservoirModel:
    """
    Draws W_res (Bernoulli(p) mask times standard normals), rescales it to
    spectral radius rho, then draws W_in ~ U[-s, s] and b ~ N(0, bias_std).
    All-zero draws are resampled with the next sub-seed.
    """
    if input_dim < 1:
        raise ShapeError(f"input_dim must be >= 1, got {input_dim}")
    n = cfg.n_r
    for attempt in range(config.RESERVOIR.build_attempts):
        rng = np.random.default_rng([cfg.seed, attempt])
        mask = rng.random((n, n)) < cfg.sparsity_p
        values = rng.standard_normal((n, n))
        w_res = sp.csr_matrix(np.where(mask, values, 0.0))
        radius = spectral_radius(w_res)
        if radius > 0.0:
            w_res = w_res * (cfg.rho / radius)
            w_in = rng.uniform(-cfg.input_scale, cfg.input_scale, size=(n, input_dim))
            bias = rng.normal(0.0, cfg.bias_std, size=n)
            logger.debug("Built reservoir n_r=%d rho=%.3f p=%.2f (attempt %d)", n, cfg.rho, cfg.sparsity_p, attempt)
            return ReservoirModel(cfg, sp.csr_matrix(w_res), w_in, bias, input_dim)
        logger.debug("Reservoir draw %d has zero spectral radius; resampling", attempt)
    error = SpectralRadiusError(
        f"reservoir n_r={n} p={cfg.sparsity_p} had zero spectral radius in {config.RESERVOIR.build_attempts} draws"
    )
    logger.error("%s", error)
    raise error


def _as_array(data: ArrayLike) -> np.ndarray:
    return np.asarray(data.data if isinstance(data, Trajectory) else data, dtype=float)


def run_reservoir(model: ReservoirModel, inputs: ArrayLike, r0: Optional[np.ndarray] = None) -> np.ndarray:
    """Teacher-forced states, one row per input row."""
    x = _as_array(inputs)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"inputs have {x.shape[1]} channels, model expects {model.input_dim}")
    state = np.zeros((1, model.config.n_r)) if r0 is None else np.asarray(r0, dtype=float).reshape(1, -1)
    if not np.all(np.isfinite(state)):
        raise PreconditionError("initial reservoir state must be finite")
    drive = model.input_drive(x)
    states = np.empty((x.shape[0], model.config.n_r))
    for t in range(x.shape[0]):
        state = model.advance(state, drive[t:t + 1])
        states[t] = state[0]
    return states


def ridge_solve(states: np.ndarray, targets: np.ndarray, ridge_lambda: float) -> np.ndarray:
    """Solves (R^T R + lam I) W = R^T Y by Cholesky, boosting the diagonal once on failure."""
    gram = states.T @ states
    rhs = states.T @ targets
    identity = np.eye(gram.shape[0])
    for lam in (ridge_lambda, ridge_lambda + 10.0 * ridge_lambda):
        try:
            factor = scipy.linalg.cho_factor(gram + lam * identity, lower=False, check_finite=True)
            return scipy.linalg.cho_solve(factor, rhs)
        except (np.linalg.LinAlgError, ValueError) as e:
            logger.warning("Cholesky failed with lambda=%g: %s", lam, e)
    error = ReadoutError(f"normal equations not positive definite even with lambda={11.0 * ridge_lambda:g}")
    logger.error("%s", error)
    raise error


def train_readout(model: ReservoirModel, train: ArrayLike) -> ReservoirModel:
    """Teacher-forced ridge readout mapping the state after x_t to x_{t+1}."""
    x = _as_array(train)
    if x.ndim == 1:
        x = x[:, None]
    washout = model.config.washout
    if x.shape[0] <= washout + 2:
        raise ShapeError(f"training series of length {x.shape[0]} is too short for washout {washout}")
    states = run_reservoir(model, x[:-1])
    w_out = ridge_solve(states[washout:], x[washout + 1:], model.config.ridge_lambda)
    return replace(model, w_out=w_out)


def rollout(model: ReservoirModel, warmup: ArrayLike, k: int, strict: bool = True) -> np.ndarray:
    """
    Teacher-forces the warmup, then runs closed loop for k steps.

    `warmup` is (w, d) or a batch (B, w, d); the result is (k, d) or (B, k, d).
    With strict=False a batch row whose forecast turns non-finite is filled
    with +inf from that step on instead of raising.
    """
    if not model.trained:
        raise PreconditionError("model has no trained readout")
    if k < 1:
        raise PreconditionError(f"horizon must be >= 1, got {k}")
    x = _as_array(warmup)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != model.input_dim:
        raise ShapeError(f"warmup has shape {x.shape}, expected (B, w, {model.input_dim})")
    if x.shape[1] < config.RESERVOIR.warmup:
        raise PreconditionError(f"warmup of {x.shape[1]} steps is shorter than {config.RESERVOIR.warmup}")

    batch = x.shape[0]
    states = np.zeros((batch, model.config.n_r))
    for t in range(x.shape[1]):
        states = model.advance(states, model.input_drive(x[:, t, :]))

    forecasts = np.empty((batch, k, model.input_dim))
    alive = np.ones(batch, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(k):
            output = states @ model.w_out
            finite = np.all(np.isfinite(output), axis=1)
            if not np.all(finite[alive]):
                if strict:
                    error = RolloutDivergedError(step + 1)
                    logger.error("%s", error)
                    raise error
                alive &= finite
            forecasts[:, step, :] = np.where(alive[:, None], output, np.inf)
            if step + 1 < k:
                feed = np.where(alive[:, None], output, 0.0)
                states = model.advance(states, model.input_drive(feed))
    return forecasts[0] if single else forecasts


def predict(model: ReservoirModel, warmup: ArrayLike, k: int) -> np.ndarray:
    return rollout(model, warmup, k)[-1]


def _train_one(cfg: ReservoirConfig, train: np.ndarray) -> ReservoirModel:
    model = build_reservoir(cfg, train.shape[1])
    model = train_readout(model, train)
    if not np.all(np.isfinite(model.w_out)):
        raise ReadoutError("readout contains non-finite weights")
    return model


def train_pool(
    configs: Sequence[ReservoirConfig],
    train: ArrayLike,
    master_seed: int = config.MASTER_SEED,
    threads: int = config.THREADS,
    grid: Optional[GridAxes] = None,
) -> ModelPool:
    """
    Builds and trains every config with seed derived from (master_seed, index).
    Results do not depend on the worker count.
    """
    if not configs:
        raise ConfigError("config list is empty")
    x = _as_array(train)
    if x.ndim == 1:
        x = x[:, None]
    seeded = [replace(cfg, seed=model_seed(master_seed, i)) for i, cfg in enumerate(configs)]

    def work(cfg: ReservoirConfig):
        try:
            return _train_one(cfg, x), "trained"
        except (ChaosRashomonError, np.linalg.LinAlgError) as e:
            return None, f"failed: {e}"

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(work, seeded))

    models = [model for model, _ in results]
    statuses = [status for _, status in results]
    failures = [i for i, model in enumerate(models) if model is None]
    for i in failures:
        logger.warning("Pool member %d failed: %s", i, statuses[i])
    if len(failures) == len(models):
        error = PoolError(f"all {len(models)} pool members failed")
        logger.error("%s", error)
        raise error
    logger.info("Trained pool of %d models (%d failed) with master seed %d", len(models), len(failures), master_seed)
    return ModelPool(models, seeded, statuses, master_seed, grid)


def save_pool(pool: ModelPool, directory: str) -> None:
    """One npz per model (dense row-major little-endian float64) plus manifest.json."""
    artifacts.ensure_dir(directory)
    files = []
    for i, (model, cfg) in enumerate(zip(pool.models, pool.configs)):
        name = f"model_{i:04d}.npz"
        if model is None:
            files.append(None)
            continue
        artifacts.write_arrays(
            os.path.join(directory, name),
            config=np.array(json.dumps(cfg.to_dict(), sort_keys=True)),
            w_res=model.w_res.toarray(),
            w_in=model.w_in,
            bias=model.bias,
            w_out=model.w_out if model.trained else np.empty((0, 0)),
        )
        files.append(name)
    artifacts.write_json(os.path.join(directory, "manifest.json"), {
        "master_seed": pool.master_seed,
        "grid": pool.grid.to_dict() if pool.grid is not None else None,
        "configs": [cfg.to_dict() for cfg in pool.configs],
        "statuses": pool.statuses,
        "files": files,
    })
    logger.info("Saved pool of %d models to %s", len(pool), directory)


def load_pool(directory: str) -> ModelPool:
    manifest = artifacts.read_json(os.path.join(directory, "manifest.json"))
    configs = [ReservoirConfig.from_dict(payload) for payload in manifest["configs"]]
    models: List[Optional[ReservoirModel]] = []
    for cfg, name in zip(configs, manifest["files"]):
        if name is None:
            models.append(None)
            continue
        arrays = artifacts.read_arrays(os.path.join(directory, name))
        w_out = arrays["w_out"] if arrays["w_out"].size else None
        models.append(ReservoirModel(
            cfg, sp.csr_matrix(arrays["w_res"]), arrays["w_in"], arrays["bias"], arrays["w_in"].shape[1], w_out,
        ))
    grid = GridAxes(**{k: tuple(v) for k, v in manifest["grid"].items()}) if manifest.get("grid") else None
    return ModelPool(models, configs, list(manifest["statuses"]), int(manifest["master_seed"]), grid)


if __name__ == "__main__":
    from logger import setup_logging
    from dynamics import simulate_lorenz96

    setup_logging()
    series = simulate_lorenz96(d=8, steps=2000, seed=1, stride=5).data
    pool = train_pool(enumerate_grid(config.DESK_GRID, washout=200)[:4], series[:1500], threads=2)
    for index in pool.trained_indices:
        forecast = predict(pool.models[index], series[1480:1500], 5)
        logger.info("model %d: 5-step error %.4f", index, float(np.linalg.norm(forecast - series[1504])))
