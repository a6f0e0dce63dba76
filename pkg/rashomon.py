"""
Horizon-constrained Rashomon sets over a trained pool.

For horizon k the set holds every model whose loss is within eps_k of the best
loss at that horizon, with eps_k = alpha * Delta_k * (1 + beta * exp(gamma * k))
and Delta_k the range of finite losses in the column.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist

import config
from dynamics import Trajectory
from errors import ConfigError, DegenerateColumnError, InsufficientDataError, ShapeError
from reservoir import ModelPool, rollout

logger = logging.getLogger(__name__)

DEFAULTS = config.RASHOMON


@dataclass(frozen=True)
class ForecastBank:
    """
    Closed-loop forecasts of every pool model on the same evaluation windows.

    truth:      (W, K, d) observed continuation of each window
    forecasts:  (H, W, K, d), +inf from the step a rollout diverged (or for a
                model that failed to train)
    scale:      sqrt of the mean per-coordinate variance of the segment
    """
    truth: np.ndarray
    forecasts: np.ndarray
    anchors: np.ndarray
    warmup: int
    scale: float = 1.0

    @property
    def n_models(self) -> int:
        return self.forecasts.shape[0]

    @property
    def n_windows(self) -> int:
        return self.truth.shape[0]

    @property
    def horizons(self) -> int:
        return self.truth.shape[1]


@dataclass(frozen=True)
class HorizonLossTable:
    losses: np.ndarray
    n_eval: int

    @property
    def pool_size(self) -> int:
        return self.losses.shape[0]

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(1, self.losses.shape[1] + 1)

    def column_best(self) -> np.ndarray:
        finite = np.where(np.isfinite(self.losses), self.losses, np.inf)
        return finite.min(axis=0)

    def to_table(self) -> Dict[str, np.ndarray]:
        models, horizons = np.meshgrid(np.arange(self.pool_size), self.horizons, indexing="ij")
        return {"model": models.ravel(), "horizon": horizons.ravel(), "loss": self.losses.ravel()}


@dataclass(frozen=True)
class EpsilonSchedule:
    alpha: float
    beta: float
    gamma: float
    eps: np.ndarray

    @classmethod
    def explicit(cls, eps: Sequence[float]) -> "EpsilonSchedule":
        return cls(float("nan"), float("nan"), float("nan"), np.asarray(eps, dtype=float))

    def scaled(self, factor: float) -> "EpsilonSchedule":
        return EpsilonSchedule(self.alpha, self.beta, self.gamma, factor * self.eps)

    def to_dict(self) -> Dict[str, Any]:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "eps_k": self.eps}


@dataclass(frozen=True)
class RashomonSets:
    members: List[np.ndarray]
    eps: np.ndarray
    l_star: np.ndarray
    pool_size: int

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=int)

    @property
    def horizons(self) -> int:
        return len(self.members)

    def intersection(self) -> np.ndarray:
        common = set(self.members[0].tolist()) if self.members else set()
        for m in self.members[1:]:
            common &= set(m.tolist())
        return np.array(sorted(common), dtype=int)

    def to_table(self) -> Dict[str, List[Any]]:
        rows: Dict[str, List[Any]] = {"horizon": [], "size": [], "eps_k": [], "l_star": [], "members": []}
        for k, members in enumerate(self.members, start=1):
            rows["horizon"].append(k)
            rows["size"].append(len(members))
            rows["eps_k"].append(self.eps[k - 1])
            rows["l_star"].append(self.l_star[k - 1])
            rows["members"].append(" ".join(str(i) for i in members))
        return rows


@dataclass(frozen=True)
class CalibrationResult:
    schedule: EpsilonSchedule
    out_of_band: int
    band: Tuple[float, float]
    sizes: np.ndarray

    @property
    def feasible(self) -> bool:
        return self.out_of_band == 0

    def gap_report(self) -> Dict[str, Any]:
        lo, hi = self.band
        return {
            "feasible": self.feasible,
            "band": [lo, hi],
            "horizons_out_of_band": self.out_of_band,
            "sizes": self.sizes,
            "below": [int(k) for k in np.flatnonzero(self.sizes < lo) + 1],
            "above": [int(k) for k in np.flatnonzero(self.sizes > hi) + 1],
        }


@dataclass(frozen=True)
class ContractionFit:
    beta_lambda_hat: float
    r2: float
    k_range: List[int]
    intercept: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"beta_lambda_hat": self.beta_lambda_hat, "r2": self.r2, "k_range": self.k_range,
                "intercept": self.intercept}


@dataclass(frozen=True)
class MultiplicityReport:
    classical_ratio: float
    rho_L: float
    weights: np.ndarray
    ambiguity_k: np.ndarray
    singleton: np.ndarray
    agreement: np.ndarray
    ambiguity_eff: float
    pairs_used: int = 0
    extras: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "classical_ratio": self.classical_ratio,
            "rho_L": self.rho_L,
            "weights": self.weights,
            "ambiguity_k": self.ambiguity_k,
            "singleton_horizons": [int(k) for k in np.flatnonzero(self.singleton) + 1],
            "ambiguity_eff": self.ambiguity_eff,
            "agreement_pairs": self.pairs_used,
        }


def window_anchors(length: int, horizons: int, warmup: int) -> np.ndarray:
    """Non-overlapping forecast windows anchored every `horizons` steps."""
    if horizons < 1:
        raise ConfigError(f"horizon count must be >= 1, got {horizons}")
    count = (length - warmup - horizons) // horizons + 1 if length >= warmup + horizons else 0
    return np.arange(max(count, 0)) * horizons


def forecast_windows(
    pool: ModelPool,
    eval_traj: Trajectory,
    horizons: int,
    warmup: int = config.RESERVOIR.warmup,
    threads: int = config.THREADS,
    min_windows: int = DEFAULTS.min_windows,
) -> ForecastBank:
    data = eval_traj.data
    anchors = window_anchors(data.shape[0], horizons, warmup)
    if anchors.size < min_windows:
        error = ConfigError(
            f"evaluation segment of {data.shape[0]} steps gives {anchors.size} windows "
            f"(warmup={warmup}, K={horizons}); need at least {min_windows}"
        )
        logger.error("%s", error)
        raise error

    warmups = np.stack([data[a:a + warmup] for a in anchors])
    truth = np.stack([data[a + warmup:a + warmup + horizons] for a in anchors])

    def work(model):
        if model is None:
            return np.full(truth.shape, np.inf)
        return rollout(model, warmups, horizons, strict=False)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        forecasts = np.stack(list(executor.map(work, pool.models)))

    scale = float(np.sqrt(np.mean(np.var(data, axis=0))))
    diverged = int(np.sum(~np.all(np.isfinite(forecasts), axis=(1, 2, 3))))
    logger.info("Forecast bank: %d models x %d windows x K=%d (%d with diverged rollouts)",
                forecasts.shape[0], anchors.size, horizons, diverged)
    return ForecastBank(truth, forecasts, anchors, warmup, scale if scale > 0 else 1.0)


def losses_from_bank(bank: ForecastBank) -> HorizonLossTable:
    with np.errstate(invalid="ignore", over="ignore"):
        sq = np.sum((bank.forecasts - bank.truth[None]) ** 2, axis=3)
    sq = np.where(np.isfinite(sq), sq, np.inf)
    return HorizonLossTable(losses=sq.mean(axis=1), n_eval=bank.n_windows)


def evaluate_losses(
    pool: ModelPool,
    eval_traj: Trajectory,
    horizons: int,
    warmup: int = config.RESERVOIR.warmup,
    threads: int = config.THREADS,
) -> HorizonLossTable:
    return losses_from_bank(forecast_windows(pool, eval_traj, horizons, warmup, threads))


def epsilon_schedule(table: HorizonLossTable, alpha: float, beta: float, gamma: float) -> EpsilonSchedule:
    if not 0 <= alpha or beta < 0 or gamma < 0:
        raise ConfigError(f"schedule needs alpha, beta, gamma >= 0, got ({alpha}, {beta}, {gamma})")
    losses = table.losses
    delta = np.empty(losses.shape[1])
    for col in range(losses.shape[1]):
        finite = losses[np.isfinite(losses[:, col]), col]
        if finite.size < 2:
            error = DegenerateColumnError(col + 1)
            logger.error("%s", error)
            raise error
        delta[col] = finite.max() - finite.min()
    k = np.arange(1, losses.shape[1] + 1)
    eps = alpha * delta * (1.0 + beta * np.exp(gamma * k))
    return EpsilonSchedule(alpha, beta, gamma, eps)


def build_sets(table: HorizonLossTable, schedule: EpsilonSchedule) -> RashomonSets:
    losses = table.losses
    if schedule.eps.shape[0] != losses.shape[1]:
        raise ShapeError(f"schedule has {schedule.eps.shape[0]} horizons, table has {losses.shape[1]}")
    l_star = table.column_best()
    members = []
    for col in range(losses.shape[1]):
        column = losses[:, col]
        inside = np.isfinite(column) & (column <= l_star[col] + schedule.eps[col])
        members.append(np.flatnonzero(inside))
    return RashomonSets(members, schedule.eps, l_star, table.pool_size)


def calibrate_schedule(
    table: HorizonLossTable,
    band: Tuple[float, float],
    alpha_grid: Sequence[float] = DEFAULTS.alpha_grid,
    beta_grid: Sequence[float] = DEFAULTS.beta_grid,
    gamma_grid: Sequence[float] = DEFAULTS.gamma_grid,
) -> CalibrationResult:
    """
    Grid search for the schedule that keeps most horizons' set sizes inside
    [lo, hi]; ties go to the smaller alpha, then beta, then gamma.
    """
    lo, hi = band
    if lo > table.pool_size:
        logger.warning("Band lower bound %s exceeds the pool size %d", lo, table.pool_size)
    best: Optional[CalibrationResult] = None
    for alpha, beta, gamma in itertools.product(sorted(alpha_grid), sorted(beta_grid), sorted(gamma_grid)):
        schedule = epsilon_schedule(table, alpha, beta, gamma)
        sizes = build_sets(table, schedule).sizes
        out = int(np.sum((sizes < lo) | (sizes > hi)))
        if best is None or out < best.out_of_band:
            best = CalibrationResult(schedule, out, (lo, hi), sizes)
            if out == 0:
                break
    if not best.feasible:
        logger.warning("Calibration gap: %d of %d horizons outside [%s, %s] at best grid point "
                       "(alpha=%s, beta=%s, gamma=%s)", best.out_of_band, len(best.sizes), lo, hi,
                       best.schedule.alpha, best.schedule.beta, best.schedule.gamma)
    else:
        logger.info("Calibrated schedule alpha=%s beta=%s gamma=%s", best.schedule.alpha,
                    best.schedule.beta, best.schedule.gamma)
    return best


def default_band(pool_size: int) -> Tuple[int, int]:
    return DEFAULTS.desk_band if pool_size < 200 else DEFAULTS.full_band


def tolerance_sweep(table: HorizonLossTable, schedule: EpsilonSchedule,
                    multipliers: Sequence[float] = DEFAULTS.sensitivity_multipliers) -> List[RashomonSets]:
    """Sets rebuilt with every eps_k scaled by each multiplier, in the order given."""
    factors = [float(m) for m in multipliers]
    if not factors or min(factors) <= 0 or not np.all(np.isfinite(factors)):
        raise ConfigError(f"tolerance multipliers must be positive and finite, got {factors}")
    sweep = [build_sets(table, schedule.scaled(m)) for m in factors]
    for m, sets in zip(factors, sweep):
        logger.debug("eps x %g: set sizes %s", m, sets.sizes.tolist())
    return sweep


def fit_contraction(sets: RashomonSets) -> ContractionFit:
    """Least-squares line through log|R_k| over horizons with at least two members."""
    sizes = sets.sizes
    usable = np.flatnonzero(sizes >= 2)
    if usable.size < 4:
        error = InsufficientDataError(f"only {usable.size} horizons have two or more members; need 4")
        logger.error("%s", error)
        raise error
    k = usable + 1.0
    log_size = np.log(sizes[usable])
    slope, intercept = np.polyfit(k, log_size, 1)
    residual = log_size - (slope * k + intercept)
    ss_tot = np.sum((log_size - log_size.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(residual ** 2) / ss_tot
    return ContractionFit(float(-slope), float(min(max(r2, 0.0), 1.0)), [int(v) for v in k], float(intercept))


def horizon_weights(lambda_max: float, dt: float, horizons: int) -> np.ndarray:
    """w_k proportional to exp(-lambda * k * dt), normalized to sum to one."""
    log_w = -lambda_max * dt * np.arange(horizons)
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def lyapunov_weighted_ratio(sets: RashomonSets, lambda_max: float, dt: float) -> Tuple[float, np.ndarray]:
    if not np.isfinite(lambda_max):
        raise ConfigError(f"lambda_max must be finite, got {lambda_max}")
    weights = horizon_weights(lambda_max, dt, sets.horizons)
    rho_l = float(np.sum(weights * sets.sizes / sets.pool_size))
    return min(max(rho_l, 0.0), 1.0), weights


def _check_distribution(p_k: Sequence[float], horizons: int) -> np.ndarray:
    p = np.asarray(p_k, dtype=float)
    if p.shape != (horizons,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ConfigError(f"horizon distribution must be {horizons} non-negative weights summing to 1")
    return p


def _agreement(forecasts: np.ndarray, models: np.ndarray, max_pairs: int) -> Tuple[np.ndarray, int]:
    horizons = forecasts.shape[2]
    pairs = list(itertools.combinations(models.tolist(), 2))
    if len(pairs) > max_pairs:
        pick = np.unique(np.linspace(0, len(pairs) - 1, max_pairs).round().astype(int))
        pairs = [pairs[i] for i in pick]
    if not pairs:
        return np.ones((horizons, horizons)), 0

    total = np.zeros(horizons)
    cross = np.zeros((horizons, horizons))
    count = 0
    for a, b in pairs:
        # (K, W*d) differences between the two members
        diff = np.moveaxis(forecasts[a] - forecasts[b], 1, 0).reshape(horizons, -1)
        total += diff.sum(axis=1)
        cross += diff @ diff.T
        count += diff.shape[1]
    mean = total / count
    cov = cross / count - np.outer(mean, mean)
    var = np.clip(np.diag(cov), 0.0, None)
    tiny = 1e-12 * max(float(var.max()), 1e-300)
    flat = var <= tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.sqrt(np.outer(var, var))
    corr = np.where(np.outer(flat, flat), 1.0, np.where(np.outer(flat, ~flat) | np.outer(~flat, flat), 0.0, corr))
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr, len(pairs)


def ambiguity_and_agreement(
    bank: ForecastBank,
    sets: RashomonSets,
    p_k: Sequence[float],
    lambda_max: Optional[float] = None,
    dt: float = 1.0,
    max_pairs: int = DEFAULTS.max_agreement_pairs,
) -> MultiplicityReport:
    """
    ambiguity_k: mean pairwise distance between members' horizon-k forecasts
    over the bank windows, in units of the segment's climatological scale.
    agreement:   Pearson correlation across horizons of the pairwise member
    forecast differences.
    """
    K = sets.horizons
    if bank.horizons != K:
        raise ShapeError(f"bank has {bank.horizons} horizons, sets have {K}")
    p = _check_distribution(p_k, K)

    ambiguity = np.zeros(K)
    singleton = np.zeros(K, dtype=bool)
    for k in range(K):
        members = sets.members[k]
        if len(members) < 2:
            singleton[k] = True
            continue
        block = bank.forecasts[members, :, k, :]
        ambiguity[k] = np.mean([pdist(block[:, w, :]).mean() for w in range(bank.n_windows)]) / bank.scale
    if singleton.any():
        logger.warning("Singleton Rashomon sets at horizons %s", (np.flatnonzero(singleton) + 1).tolist())

    union = np.unique(np.concatenate([m for m in sets.members] + [np.empty(0, dtype=int)])).astype(int)
    union = union[np.all(np.isfinite(bank.forecasts[union]), axis=(1, 2, 3))] if union.size else union
    agreement, pairs_used = _agreement(bank.forecasts, union, max_pairs)

    classical = float(np.mean(sets.sizes / sets.pool_size))
    if lambda_max is None:
        rho_l, weights = classical, np.full(K, 1.0 / K)
    else:
        rho_l, weights = lyapunov_weighted_ratio(sets, lambda_max, dt)
    return MultiplicityReport(
        classical_ratio=classical,
        rho_L=rho_l,
        weights=weights,
        ambiguity_k=ambiguity,
        singleton=singleton,
        agreement=agreement,
        ambiguity_eff=float(np.sum(p * ambiguity)),
        pairs_used=pairs_used,
    )
