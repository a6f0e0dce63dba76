"""
Decision layer: utilities over (future state, action), action optimizers, and
horizon-aware selection among Rashomon-set members.

A forecast chooses the action, the observed future pays for it. Utilities
compare an m-dimensional action with the first m coordinates of the state.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

import config
from dynamics import Trajectory
from errors import ConfigError, PreconditionError, ShapeError, UnsupportedOptimizerError
from rashomon import (
    EpsilonSchedule,
    ForecastBank,
    HorizonLossTable,
    RashomonSets,
    forecast_windows,
    losses_from_bank,
    tolerance_sweep,
)
from reservoir import ModelPool, ReservoirModel

logger = logging.getLogger(__name__)

DEFAULTS = config.DECISION
OPTIMIZERS = ("auto", "gradient", "cem", "exhaustive")


@dataclass(frozen=True)
class BoxSpace:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ConfigError(f"box bounds must be matching vectors, got {lower.shape} and {upper.shape}")
        if not np.all(lower < upper):
            raise ConfigError("box needs lower < upper in every coordinate")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2.0

    def clip(self, actions: np.ndarray) -> np.ndarray:
        return np.clip(actions, self.lower, self.upper)


@dataclass(frozen=True)
class DiscreteSpace:
    actions: np.ndarray

    def __post_init__(self) -> None:
        actions = np.asarray(self.actions, dtype=float)
        if actions.ndim == 1:
            actions = actions[:, None]
        if actions.shape[0] == 0:
            raise ConfigError("discrete action space is empty")
        object.__setattr__(self, "actions", actions)

    @property
    def dim(self) -> int:
        return self.actions.shape[1]

    @property
    def size(self) -> int:
        return self.actions.shape[0]


ActionSpace = Union[BoxSpace, DiscreteSpace]


def _targets(x: np.ndarray, m: int) -> np.ndarray:
    if x.shape[-1] < m:
        raise ShapeError(f"actions have {m} components but the state only {x.shape[-1]}")
    return x[..., :m]


class QuadraticTracking:
    """u(x, a) = -scale * |a - x[:m]|^2"""
    kind = "quadratic"
    differentiable = True

    def __init__(self, scale: float = 1.0) -> None:
        if not scale > 0:
            raise ConfigError(f"quadratic scale must be positive, got {scale}")
        self.scale = float(scale)

    def value(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        diff = a - _targets(x, a.shape[-1])
        return -self.scale * np.sum(diff * diff, axis=-1)

    smooth_value = value

    def gradient(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return -2.0 * self.scale * (a - _targets(x, a.shape[-1]))

    def argmax(self, x: np.ndarray, space: BoxSpace) -> np.ndarray:
        return space.clip(_targets(x, space.dim))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "scale": self.scale}


class AsymmetricLinear:
    """
    u(x, a) = -(over_cost * max(a - x, 0) + under_cost * max(x - a, 0)), summed
    over action components. Gradient methods work on a softplus surrogate.
    """
    kind = "asymmetric"
    differentiable = True

    def __init__(self, over_cost: float, under_cost: float, sharpness: float = DEFAULTS.softplus_sharpness) -> None:
        if not (over_cost > 0 and under_cost > 0):
            raise ConfigError(f"asymmetric costs must be positive, got over={over_cost} under={under_cost}")
        self.over_cost = float(over_cost)
        self.under_cost = float(under_cost)
        self.sharpness = float(sharpness)

    def value(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        z = a - _targets(x, a.shape[-1])
        return -np.sum(self.over_cost * np.maximum(z, 0.0) + self.under_cost * np.maximum(-z, 0.0), axis=-1)

    def smooth_value(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        s = self.sharpness
        z = a - _targets(x, a.shape[-1])
        over = np.logaddexp(0.0, s * z) / s
        under = np.logaddexp(0.0, -s * z) / s
        return -np.sum(self.over_cost * over + self.under_cost * under, axis=-1)

    def gradient(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        s = self.sharpness
        z = a - _targets(x, a.shape[-1])
        return -self.over_cost * expit(s * z) + self.under_cost * expit(-s * z)

    def argmax(self, x: np.ndarray, space: BoxSpace) -> np.ndarray:
        return space.clip(_targets(x, space.dim))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "over_cost": self.over_cost, "under_cost": self.under_cost,
                "sharpness": self.sharpness}


class TableUtility:
    """
    Payoff per discrete action, optionally per bin of the first state
    coordinate: values has shape (n_actions,) or (len(edges) + 1, n_actions).
    """
    kind = "table"
    differentiable = False

    def __init__(self, values: Sequence, edges: Optional[Sequence[float]] = None) -> None:
        table = np.asarray(values, dtype=float)
        if table.ndim == 1:
            table = table[None, :]
        edges = np.asarray(edges if edges is not None else [], dtype=float)
        if table.shape[0] != edges.size + 1:
            raise ConfigError(f"table has {table.shape[0]} rows but {edges.size} bin edges")
        if not np.all(np.isfinite(table)):
            raise ConfigError("table utility values must be finite")
        self.table = table
        self.edges = edges

    def payoffs(self, x: np.ndarray) -> np.ndarray:
        """(N, n_actions) payoffs for each state row."""
        rows = np.searchsorted(self.edges, x[..., 0], side="right") if self.edges.size else np.zeros(x.shape[0], int)
        return self.table[rows]

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "values": self.table.tolist(), "edges": self.edges.tolist()}


UtilityFn = Union[QuadraticTracking, AsymmetricLinear, TableUtility]


def parse_utility(payload: Dict[str, Any]) -> UtilityFn:
    params = {key: value for key, value in payload.items() if key != "kind"}
    builders = {"quadratic": QuadraticTracking, "asymmetric": AsymmetricLinear, "table": TableUtility}
    kind = payload.get("kind")
    if kind not in builders:
        raise ConfigError(f"unknown utility kind '{kind}'")
    try:
        return builders[kind](**params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for utility '{kind}': {e}") from e


def parse_action_space(payload: Dict[str, Any]) -> ActionSpace:
    kind = payload.get("kind")
    if kind == "box" and set(payload) <= {"kind", "lower", "upper"}:
        return BoxSpace(payload["lower"], payload["upper"])
    if kind == "discrete" and set(payload) <= {"kind", "actions"}:
        return DiscreteSpace(payload["actions"])
    raise ConfigError(f"bad action space {payload}")


def discrete_payoffs(u: UtilityFn, x: np.ndarray, space: DiscreteSpace) -> np.ndarray:
    """(N, n_actions) exact utilities of every discrete action."""
    if isinstance(u, TableUtility):
        payoffs = u.payoffs(x)
        if payoffs.shape[1] != space.size:
            raise ConfigError(f"table has {payoffs.shape[1]} actions, space has {space.size}")
        return payoffs
    n = x.shape[0]
    tiled_x = np.repeat(x, space.size, axis=0)
    tiled_a = np.tile(space.actions, (n, 1))
    return u.value(tiled_x, tiled_a).reshape(n, space.size)


@dataclass
class DecisionConfig:
    p_k: np.ndarray
    lambda_max: float = 0.0
    dt: float = 1.0

    def __post_init__(self) -> None:
        p = np.asarray(self.p_k, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ConfigError("p_k must be a non-negative distribution summing to 1")
        if not np.isfinite(self.lambda_max):
            raise ConfigError(f"lambda_max must be finite, got {self.lambda_max}")
        self.p_k = p

    @property
    def horizons(self) -> int:
        return self.p_k.size

    @property
    def modal_horizon(self) -> int:
        return int(np.argmax(self.p_k)) + 1

    @property
    def k_eff(self) -> float:
        """Discounted characteristic horizon, in steps; the mean horizon at lambda = 0."""
        k = np.arange(1, self.horizons + 1)
        rate = self.lambda_max * self.dt
        if rate == 0:
            return float(np.sum(k * self.p_k))
        return float(-np.log(np.sum(self.p_k * np.exp(-rate * k))) / rate)

    def weights(self) -> np.ndarray:
        """p_k * exp(-lambda * k * dt) as written in the aggregation rule."""
        k = np.arange(1, self.horizons + 1)
        return self.p_k * np.exp(-self.lambda_max * self.dt * k)

    def normalized_weights(self) -> np.ndarray:
        """Same weights rescaled to sum to one, computed in log space."""
        k = np.arange(1, self.horizons + 1)
        active = self.p_k > 0
        log_w = np.full(self.horizons, -np.inf)
        log_w[active] = np.log(self.p_k[active]) - self.lambda_max * self.dt * k[active]
        w = np.exp(log_w - log_w[active].max())
        return w / w.sum()


def _as_batch(xhat: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(xhat, dtype=float)
    single = x.ndim == 1
    return (x[None] if single else x), single


def optimize_action_gradient(
    u: UtilityFn,
    xhat: np.ndarray,
    space: ActionSpace,
    step: float = DEFAULTS.step,
    iters: int = DEFAULTS.iters,
) -> np.ndarray:
    """
    Projected Adam ascent from the box centre with a cosine-annealed step;
    returns the best iterate by (surrogate) utility. Works row-wise on a
    batch of estimates.
    """
    if not getattr(u, "differentiable", False) or not isinstance(space, BoxSpace):
        error = UnsupportedOptimizerError(
            f"gradient optimizer needs a differentiable utility on a box, got {u.kind}; use cem"
        )
        logger.error("%s", error)
        raise error
    x, single = _as_batch(xhat)
    b1, b2, eps = DEFAULTS.adam_beta1, DEFAULTS.adam_beta2, DEFAULTS.adam_eps

    a = np.tile(space.center, (x.shape[0], 1))
    m = np.zeros_like(a)
    v = np.zeros_like(a)
    best = a.copy()
    best_value = u.smooth_value(x, a)
    for t in range(1, iters + 1):
        g = u.gradient(x, a)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        lr = step * 0.5 * (1.0 + np.cos(np.pi * (t - 1) / iters))
        a = space.clip(a + lr * m_hat / (np.sqrt(v_hat) + eps))
        value = u.smooth_value(x, a)
        improved = value > best_value
        best[improved] = a[improved]
        best_value = np.where(improved, value, best_value)
    return best[0] if single else best


def _cem_discrete(payoffs: np.ndarray, population: int, elite: int, generations: int,
                  rng: np.random.Generator) -> np.ndarray:
    n_rows, n_actions = payoffs.shape
    probs = np.full((n_rows, n_actions), 1.0 / n_actions)
    best_idx = np.zeros(n_rows, dtype=int)
    best_val = np.full(n_rows, -np.inf)
    rows = np.arange(n_rows)[:, None]
    for _ in range(generations):
        cumulative = np.cumsum(probs, axis=1)
        draws = rng.random((n_rows, population, 1))
        idx = np.minimum((draws > cumulative[:, None, :]).sum(axis=2), n_actions - 1)
        values = payoffs[rows, idx]
        order = np.argsort(-values, axis=1, kind="stable")[:, :elite]
        elite_idx = np.take_along_axis(idx, order, axis=1)
        top = np.take_along_axis(values, order[:, :1], axis=1)[:, 0]
        better = top > best_val
        best_val = np.where(better, top, best_val)
        best_idx = np.where(better, elite_idx[:, 0], best_idx)
        probs = np.stack([np.bincount(row, minlength=n_actions) for row in elite_idx]) / float(elite)
        if np.all(probs * (1.0 - probs) < DEFAULTS.cem_var_tol):
            break
    return best_idx


def optimize_action_cem(
    u: UtilityFn,
    xhat: np.ndarray,
    space: ActionSpace,
    population: int = DEFAULTS.cem_population,
    elite_frac: float = DEFAULTS.cem_elite_frac,
    generations: int = DEFAULTS.cem_generations,
    seed: int = 0,
) -> np.ndarray:
    """
    Cross-entropy method: Gaussian proposal on a box, categorical on a
    discrete set, refit to the elite fraction each generation. Keeps the best
    action ever sampled under the exact utility.
    """
    x, single = _as_batch(xhat)
    rng = np.random.default_rng(seed)
    elite = max(1, int(round(population * elite_frac)))

    if isinstance(space, DiscreteSpace):
        if space.size == 1:
            result = np.tile(space.actions[0], (x.shape[0], 1))
            return result[0] if single else result
        idx = _cem_discrete(discrete_payoffs(u, x, space), population, elite, generations, rng)
        result = space.actions[idx]
        return result[0] if single else result

    if isinstance(u, TableUtility):
        raise ConfigError("table utilities need a discrete action space")
    n_rows, dim = x.shape[0], space.dim
    mean = np.tile(space.center, (n_rows, 1))
    std = np.tile((space.upper - space.lower) / 2.0, (n_rows, 1))
    best = mean.copy()
    best_value = u.value(x, mean)
    for _ in range(generations):
        samples = space.clip(mean[:, None, :] + std[:, None, :] * rng.standard_normal((n_rows, population, dim)))
        values = u.value(np.repeat(x[:, None, :], population, axis=1), samples)
        order = np.argsort(-values, axis=1, kind="stable")[:, :elite]
        elites = np.take_along_axis(samples, order[:, :, None], axis=1)
        top = np.take_along_axis(values, order[:, :1], axis=1)[:, 0]
        better = top > best_value
        best[better] = elites[better, 0]
        best_value = np.where(better, top, best_value)
        mean = elites.mean(axis=1)
        std = elites.std(axis=1)
        if np.all(std ** 2 < DEFAULTS.cem_var_tol):
            break
    return best[0] if single else best


def choose_actions(u: UtilityFn, xhat: np.ndarray, space: ActionSpace,
                   optimizer: str = "auto", seed: int = 0) -> np.ndarray:
    """Optimal action per forecast row under the selected optimizer."""
    if optimizer not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer '{optimizer}', expected one of {OPTIMIZERS}")
    x, single = _as_batch(xhat)
    if isinstance(space, DiscreteSpace) and optimizer in ("auto", "exhaustive"):
        actions = space.actions[np.argmax(discrete_payoffs(u, x, space), axis=1)]
    elif optimizer == "cem":
        actions = optimize_action_cem(u, x, space, seed=seed)
    elif optimizer == "gradient":
        actions = optimize_action_gradient(u, x, space)
    elif isinstance(space, BoxSpace) and hasattr(u, "argmax"):
        actions = u.argmax(x, space)
    elif isinstance(space, BoxSpace) and isinstance(u, TableUtility):
        raise ConfigError("table utilities need a discrete action space")
    else:
        actions = optimize_action_cem(u, x, space, seed=seed)
    return actions[0] if single else actions


def realized_scores(u: UtilityFn, truth: np.ndarray, actions: np.ndarray, space: ActionSpace) -> np.ndarray:
    if isinstance(u, TableUtility):
        payoffs = u.payoffs(truth)
        # actions come from the space, so match them back to their index
        matches = np.all(actions[:, None, :] == space.actions[None, :, :], axis=2)
        return payoffs[np.arange(truth.shape[0]), np.argmax(matches, axis=1)]
    return u.value(truth, actions)


def horizon_utility(forecast: np.ndarray, truth: np.ndarray, u: UtilityFn, space: ActionSpace,
                    optimizer: str = "auto", seed: int = 0) -> float:
    """Mean realized utility over windows: act on the forecast, score on the truth."""
    if not np.all(np.isfinite(forecast)):
        return float("-inf")
    actions = choose_actions(u, forecast, space, optimizer, seed)
    return float(np.mean(realized_scores(u, truth, actions, space)))


def utility_matrix(
    bank: ForecastBank,
    models: Sequence[int],
    u: UtilityFn,
    space: ActionSpace,
    active: Optional[np.ndarray] = None,
    optimizer: str = "auto",
    seed: int = 0,
) -> np.ndarray:
    """U_k(h) for the listed models; inactive horizons are left at 0."""
    K = bank.horizons
    active = np.ones(K, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    table = np.zeros((len(models), K))
    for row, h in enumerate(models):
        for k in np.flatnonzero(active):
            # the optimizer seed depends on the horizon only
            table[row, k] = horizon_utility(bank.forecasts[h, :, k, :], bank.truth[:, k, :], u, space,
                                            optimizer, seed=seed + k)
    return table


def realized_utility(
    model: ReservoirModel,
    eval_traj: Trajectory,
    k: int,
    u: UtilityFn,
    space: ActionSpace,
    warmup: int = config.RESERVOIR.warmup,
    optimizer: str = "auto",
    seed: int = 0,
) -> float:
    if k < 1:
        raise PreconditionError(f"horizon must be >= 1, got {k}")
    pool = ModelPool([model], [model.config], ["trained"], 0)
    bank = forecast_windows(pool, eval_traj, k, warmup, threads=1)
    return horizon_utility(bank.forecasts[0, :, k - 1, :], bank.truth[:, k - 1, :], u, space,
                           optimizer, seed=seed + k - 1)


def ensemble_utility(bank: ForecastBank, sets: RashomonSets, u: UtilityFn, space: ActionSpace,
                     active: np.ndarray, optimizer: str = "auto", seed: int = 0) -> np.ndarray:
    """Per-horizon utility of the mean forecast over that horizon's members."""
    row = np.zeros(bank.horizons)
    for k in np.flatnonzero(active):
        members = sets.members[k]
        if len(members) == 0:
            row[k] = -np.inf
            continue
        mean_forecast = bank.forecasts[members, :, k, :].mean(axis=0)
        row[k] = horizon_utility(mean_forecast, bank.truth[:, k, :], u, space, optimizer, seed=seed + k)
    return row


@dataclass
class SelectionResult:
    candidates: np.ndarray
    sample: np.ndarray
    utilities: np.ndarray
    aggregated: np.ndarray
    chosen: int
    weights: np.ndarray
    fallback: bool
    baselines: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "candidates": self.candidates,
            "sample": self.sample,
            "utilities": self.utilities,
            "aggregated": self.aggregated,
            "chosen": self.chosen,
            "weights": self.weights,
            "fallback": self.fallback,
            "baselines": self.baselines,
        }


def candidate_set(sets: RashomonSets, cfg: DecisionConfig) -> Tuple[np.ndarray, bool]:
    candidates = sets.intersection()
    if candidates.size:
        return candidates, False
    k_mode = cfg.modal_horizon
    logger.warning("Rashomon sets have an empty intersection; falling back to horizon %d's set", k_mode)
    return np.asarray(sets.members[k_mode - 1], dtype=int), True


def _aggregate(table: np.ndarray, weights: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.where(weights > 0, table, 0.0) @ weights


def select_from_banks(
    val_bank: ForecastBank,
    sets: RashomonSets,
    cfg: DecisionConfig,
    u: UtilityFn,
    space: ActionSpace,
    sample_size: int,
    seed: int,
    test_bank: Optional[ForecastBank] = None,
    optimizer: str = "auto",
    random_seeds: int = DEFAULTS.random_baseline_seeds,
) -> SelectionResult:
    """
    Chooses among a seeded sample of the candidate set by p_k-and-Lyapunov
    weighted validation utility, then scores the choice and the baselines
    on the test bank (the validation bank when no test bank is given).
    """
    if sample_size < 1:
        raise ConfigError(f"sample size must be >= 1, got {sample_size}")
    if cfg.horizons != sets.horizons or val_bank.horizons != sets.horizons:
        raise ShapeError("decision config, sets and forecast bank disagree on the number of horizons")
    candidates, fallback = candidate_set(sets, cfg)
    if candidates.size == 0:
        raise PreconditionError("no candidate models at the modal horizon")

    rng = np.random.default_rng(seed)
    sample = np.sort(rng.choice(candidates, size=min(sample_size, candidates.size), replace=False))
    active = cfg.p_k > 0
    weights = cfg.normalized_weights()

    val_utilities = utility_matrix(val_bank, sample, u, space, active, optimizer, seed)
    scores = _aggregate(val_utilities, weights)
    chosen = int(sample[int(np.argmax(scores))])

    score_bank = test_bank if test_bank is not None else val_bank
    val_losses = losses_from_bank(val_bank).losses
    target = cfg.modal_horizon - 1
    single_best = int(np.argmin(np.where(np.isfinite(val_losses[:, target]), val_losses[:, target], np.inf)))

    scored = np.unique(np.concatenate([candidates, [single_best]]))
    test_scores = dict(zip(scored.tolist(),
                           _aggregate(utility_matrix(score_bank, scored, u, space, active, optimizer, seed), weights)))

    ensemble = float(_aggregate(ensemble_utility(score_bank, sets, u, space, active, optimizer, seed)[None], weights)[0])
    random_pick = int(np.random.default_rng([seed, 1]).choice(candidates))
    random_draws = np.array([test_scores[int(np.random.default_rng([seed, 1, s]).choice(candidates))]
                             for s in range(random_seeds)])
    # over every scored model, not only the sample
    oracle = int(max(scored.tolist(), key=lambda h: (np.nan_to_num(test_scores[h], nan=-np.inf), -h)))

    baselines = {
        "chosen": {"model": chosen, "utility": test_scores[chosen]},
        "single_best": {"model": single_best, "utility": test_scores[single_best], "target_horizon": target + 1},
        "ensemble": {"utility": ensemble},
        "random": {
            "model": random_pick,
            "utility": test_scores[random_pick],
            "mean": float(random_draws.mean()),
            "stderr": float(random_draws.std(ddof=1) / np.sqrt(random_seeds)) if random_seeds > 1 else 0.0,
            "expected": float(np.mean([test_scores[h] for h in candidates.tolist()])),
        },
        "oracle": {"model": oracle, "utility": test_scores[oracle], "scope": "candidates+single_best"},
    }
    logger.info("Selected model %d from %d sampled of %d candidates%s (test utility %.4f, oracle %.4f)",
                chosen, sample.size, candidates.size, " [fallback]" if fallback else "",
                test_scores[chosen], test_scores[oracle])
    return SelectionResult(candidates, sample, val_utilities, scores, chosen, weights, fallback, baselines)


def select_model(
    pool: ModelPool,
    sets: RashomonSets,
    cfg: DecisionConfig,
    u: UtilityFn,
    space: ActionSpace,
    eval_traj: Trajectory,
    sample_size: int,
    seed: int,
    test_traj: Optional[Trajectory] = None,
    warmup: int = config.RESERVOIR.warmup,
    optimizer: str = "auto",
    threads: int = config.THREADS,
) -> SelectionResult:
    val_bank = forecast_windows(pool, eval_traj, sets.horizons, warmup, threads)
    test_bank = forecast_windows(pool, test_traj, sets.horizons, warmup, threads) if test_traj is not None else None
    return select_from_banks(val_bank, sets, cfg, u, space, sample_size, seed, test_bank, optimizer)


@dataclass(frozen=True)
class SweepCurve:
    sizes: List[int]
    mean_gap: np.ndarray
    stderr: np.ndarray
    repeats: int

    def to_table(self) -> Dict[str, Any]:
        return {"sample_size": self.sizes, "mean_gap": self.mean_gap, "stderr": self.stderr}


def sample_complexity_sweep(
    bank: ForecastBank,
    sets: RashomonSets,
    cfg: DecisionConfig,
    u: UtilityFn,
    space: ActionSpace,
    sizes: Sequence[int],
    repeats: int,
    seed: int,
    optimizer: str = "auto",
) -> SweepCurve:
    """
    Gap between the best aggregated utility over the whole candidate set and
    that of the model chosen from a random sample of each size.
    """
    sizes = [int(s) for s in sizes]
    if not sizes or sizes != sorted(sizes) or sizes[0] < 1:
        raise ConfigError(f"sample sizes must be positive and ascending, got {sizes}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    candidates, _ = candidate_set(sets, cfg)
    weights = cfg.normalized_weights()
    scores = _aggregate(utility_matrix(bank, candidates, u, space, cfg.p_k > 0, optimizer, seed), weights)
    best = scores.max()

    mean_gap = np.empty(len(sizes))
    stderr = np.empty(len(sizes))
    for i, size in enumerate(sizes):
        gaps = np.empty(repeats)
        for r in range(repeats):
            rng = np.random.default_rng([seed, size, r])
            picked = np.sort(rng.choice(candidates.size, size=min(size, candidates.size), replace=False))
            gaps[r] = best - scores[picked].max()
        mean_gap[i] = gaps.mean()
        stderr[i] = gaps.std(ddof=1) / np.sqrt(repeats) if repeats > 1 else 0.0
        logger.debug("|S|=%d: mean gap %.5f +- %.5f", size, mean_gap[i], stderr[i])
    return SweepCurve(sizes, mean_gap, stderr, repeats)


@dataclass
class ToleranceCurve:
    multipliers: List[float]
    sizes: np.ndarray
    eps: np.ndarray
    candidates: np.ndarray
    fallback: np.ndarray
    best_utility: np.ndarray
    mean_utility: np.ndarray

    def set_size_table(self) -> Dict[str, List[Any]]:
        rows: Dict[str, List[Any]] = {"multiplier": [], "horizon": [], "eps_k": [], "size": []}
        for i, m in enumerate(self.multipliers):
            for k in range(self.sizes.shape[1]):
                rows["multiplier"].append(m)
                rows["horizon"].append(k + 1)
                rows["eps_k"].append(self.eps[i, k])
                rows["size"].append(int(self.sizes[i, k]))
        return rows

    def utility_table(self) -> Dict[str, Any]:
        return {
            "multiplier": self.multipliers,
            "candidates": self.candidates,
            "fallback": self.fallback,
            "best_utility": self.best_utility,
            "mean_utility": self.mean_utility,
        }


def tolerance_sensitivity(
    bank: ForecastBank,
    table: HorizonLossTable,
    schedule: EpsilonSchedule,
    cfg: DecisionConfig,
    u: UtilityFn,
    space: ActionSpace,
    multipliers: Sequence[float] = config.RASHOMON.sensitivity_multipliers,
    seed: int = 0,
    optimizer: str = "auto",
) -> ToleranceCurve:
    """
    Set sizes per horizon and the aggregated utility of the resulting
    candidate set (best and mean member) as every eps_k is scaled.
    """
    sweep = tolerance_sweep(table, schedule, multipliers)
    weights = cfg.normalized_weights()
    scores = _aggregate(utility_matrix(bank, np.arange(table.pool_size), u, space, cfg.p_k > 0, optimizer, seed),
                        weights)
    n = len(sweep)
    candidates = np.empty(n, dtype=int)
    fallback = np.empty(n, dtype=bool)
    best = np.empty(n)
    mean = np.empty(n)
    for i, sets in enumerate(sweep):
        members, fallback[i] = candidate_set(sets, cfg)
        candidates[i] = members.size
        best[i] = scores[members].max()
        mean[i] = scores[members].mean()
    logger.info("Tolerance sensitivity over %d multipliers: candidates %s", n, candidates.tolist())
    return ToleranceCurve(
        [float(m) for m in multipliers],
        np.stack([s.sizes for s in sweep]),
        np.stack([s.eps for s in sweep]),
        candidates, fallback, best, mean,
    )
