"""
Experiment harness: config parsing and the cmd_* operations behind the CLI.

Every run writes into one output directory:
  trajectory.csv / trajectory.json     simulate
  split.json                           split
  pool/                                train_pool
  lyapunov.json, divergence.csv        lyapunov
  loss_table.csv                       losses
  schedule.json, sets.csv              sets
  contraction.json                     contraction
  multiplicity.json, agreement.csv     multiplicity
  sensitivity.csv, sensitivity_utility.csv  sensitivity
  selection.json, utility_by_horizon.csv  selection
  sample_complexity.csv                sweep
  manifest.json                        per-stage status, updated after every stage
"""
import os
import copy
import glob
import time
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

import artifacts
import config
from config import DESK_GRID, FULL_GRID, GridAxes
from decision import (
    DecisionConfig,
    parse_action_space,
    parse_utility,
    sample_complexity_sweep,
    select_from_banks,
    ensemble_utility,
    tolerance_sensitivity,
    utility_matrix,
)
from dynamics import (
    ExternalSpec,
    Lorenz96Spec,
    SplitSpec,
    SystemSpec,
    load_csv,
    parse_system_spec,
    simulate,
    split_standardize,
    write_csv,
)
from errors import ChaosRashomonError, ConfigError, ParseError, StageError
from lyapunov import EmbeddingParams, benettin_oracle, estimate_lyapunov
from rashomon import (
    EpsilonSchedule,
    RashomonSets,
    ambiguity_and_agreement,
    build_sets,
    calibrate_schedule,
    default_band,
    epsilon_schedule,
    fit_contraction,
    forecast_windows,
    losses_from_bank,
)
from reservoir import enumerate_grid, load_pool, save_pool, train_pool

logger = logging.getLogger(__name__)

SECTION_KEYS = {
    "": {"system", "simulation", "split", "grid", "reservoir", "horizons", "warmup", "rashomon",
         "lyapunov", "decision", "sweep", "master_seed", "threads", "output_dir"},
    "simulation": {"steps", "dt", "stride", "transient"},
    "reservoir": {"input_scale", "bias_std", "ridge_lambda", "washout"},
    "rashomon": {"band", "schedule", "eps", "sensitivity"},
    "lyapunov": {"oracle_steps", "j_max", "m_refs", "tau_max", "m_max", "overrides"},
    "decision": {"utility", "space", "p_k", "optimizer", "sample_size", "sweep_sizes", "sweep_repeats"},
    "sweep": {"forcings"},
}


@dataclass
class ExperimentConfig:
    system: SystemSpec
    split: SplitSpec = field(default_factory=SplitSpec)
    simulation: Dict[str, Any] = field(default_factory=dict)
    grid: GridAxes = DESK_GRID
    reservoir: Dict[str, Any] = field(default_factory=dict)
    horizons: int = 20
    warmup: int = config.RESERVOIR.warmup
    rashomon: Dict[str, Any] = field(default_factory=dict)
    lyapunov: Dict[str, Any] = field(default_factory=dict)
    decision: Dict[str, Any] = field(default_factory=dict)
    sweep: Dict[str, Any] = field(default_factory=dict)
    master_seed: int = config.MASTER_SEED
    threads: int = config.THREADS
    output_dir: str = config.OUTPUT_DIR

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ExperimentConfig":
        _check_keys(payload, "")
        for section in ("simulation", "reservoir", "rashomon", "lyapunov", "decision", "sweep"):
            if section in payload:
                if not isinstance(payload[section], dict):
                    raise ConfigError(f"section '{section}' must be an object")
                _check_keys(payload[section], section)
        if "system" not in payload:
            raise ConfigError("config needs a 'system' section")

        system = parse_system_spec(payload["system"])
        split_payload = payload.get("split", {})
        if set(split_payload) - {"train_frac", "val_frac", "test_frac"}:
            raise ConfigError(f"unknown split keys: {sorted(set(split_payload) - {'train_frac', 'val_frac', 'test_frac'})}")
        split = SplitSpec(**split_payload)

        cfg = cls(
            system=system,
            split=split,
            simulation=_fill(payload.get("simulation", {}), _simulation_defaults(system)),
            grid=_parse_grid(payload.get("grid", "desk")),
            reservoir=_fill(payload.get("reservoir", {}), {
                "input_scale": config.RESERVOIR.input_scale,
                "bias_std": config.RESERVOIR.bias_std,
                "ridge_lambda": config.RESERVOIR.ridge_lambda,
                "washout": config.RESERVOIR.washout,
            }),
            horizons=int(payload.get("horizons", 20)),
            warmup=int(payload.get("warmup", config.RESERVOIR.warmup)),
            rashomon=dict(payload.get("rashomon", {})),
            lyapunov=_fill(payload.get("lyapunov", {}), {
                "oracle_steps": 20000,
                "j_max": config.LYAPUNOV.j_max,
                "m_refs": config.LYAPUNOV.m_refs,
                "tau_max": config.LYAPUNOV.tau_max,
                "m_max": config.LYAPUNOV.m_max,
                "overrides": None,
            }),
            decision=_fill(payload.get("decision", {}), {
                "utility": {"kind": "quadratic", "scale": 1.0},
                "space": {"kind": "box", "lower": [-5.0], "upper": [5.0]},
                "p_k": "uniform",
                "optimizer": "auto",
                "sample_size": 10,
                "sweep_sizes": [1, 2, 4, 8],
                "sweep_repeats": 20,
            }),
            sweep=_fill(payload.get("sweep", {}), {"forcings": [5.0, 10.0, 15.0, 20.0, 25.0]}),
            master_seed=int(payload.get("master_seed", config.MASTER_SEED)),
            threads=int(payload.get("threads", config.THREADS)),
            output_dir=str(payload.get("output_dir", config.OUTPUT_DIR)),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            payload = artifacts.read_json(path)
        except ValueError as e:
            raise ParseError(f"config {path} is not valid JSON: {e}") from e
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(payload, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(payload)

    def validate(self) -> None:
        if self.horizons < 1:
            raise ConfigError(f"horizons must be >= 1, got {self.horizons}")
        if self.warmup < config.RESERVOIR.warmup:
            raise ConfigError(f"warmup must be >= {config.RESERVOIR.warmup}, got {self.warmup}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if len(set(self.rashomon) & {"band", "schedule", "eps"}) > 1:
            raise ConfigError("rashomon takes one of 'band', 'schedule' or 'eps'")
        try:
            multipliers = self.sensitivity_multipliers()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"rashomon sensitivity must be a list of numbers: {e}") from e
        if not multipliers or min(multipliers) <= 0:
            raise ConfigError(f"rashomon sensitivity multipliers must be positive, got {multipliers}")
        enumerate_grid(self.grid, **self.reservoir)
        self.decision_config(0.0, 1.0)
        self.utility()
        self.action_space()
        if self.lyapunov["overrides"] is not None:
            EmbeddingParams(**self.lyapunov["overrides"])

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       grid: Optional[str] = None, threads: Optional[int] = None) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.master_seed = int(seed)
        if out is not None:
            cfg.output_dir = out
        if grid is not None:
            cfg.grid = _parse_grid(grid)
        if threads is not None:
            cfg.threads = int(threads)
        cfg.validate()
        return cfg

    def sensitivity_multipliers(self) -> List[float]:
        return [float(m) for m in self.rashomon.get("sensitivity", config.RASHOMON.sensitivity_multipliers)]

    def p_k(self) -> np.ndarray:
        p = self.decision["p_k"]
        if p == "uniform":
            return np.full(self.horizons, 1.0 / self.horizons)
        p = np.asarray(p, dtype=float)
        if p.shape != (self.horizons,):
            raise ConfigError(f"p_k needs {self.horizons} entries, got {p.size}")
        return p

    def decision_config(self, lambda_max: float, dt: float) -> DecisionConfig:
        return DecisionConfig(self.p_k(), lambda_max, dt)

    def utility(self):
        return parse_utility(self.decision["utility"])

    def action_space(self):
        return parse_action_space(self.decision["space"])

    def resolved(self) -> Dict[str, Any]:
        """Everything that shapes the results; thread count and output directory are left out."""
        system = {key: value for key, value in vars(self.system).items()}
        return {
            "system": system,
            "simulation": self.simulation,
            "split": vars(self.split),
            "grid": self.grid.to_dict(),
            "reservoir": self.reservoir,
            "horizons": self.horizons,
            "warmup": self.warmup,
            "rashomon": self.rashomon,
            "lyapunov": self.lyapunov,
            "decision": self.decision,
            "sweep": self.sweep,
            "master_seed": self.master_seed,
        }


def _check_keys(payload: Dict[str, Any], section: str) -> None:
    unknown = set(payload) - SECTION_KEYS[section]
    if unknown:
        where = f"section '{section}'" if section else "top level"
        raise ConfigError(f"unknown config keys at {where}: {sorted(unknown)}")


def _fill(payload: Dict[str, Any], defaults: Dict[str, Any]) -> Dict[str, Any]:
    filled = dict(defaults)
    filled.update(payload)
    return filled


def _simulation_defaults(system: SystemSpec) -> Dict[str, Any]:
    if isinstance(system, Lorenz96Spec):
        return {"steps": 6000, "dt": config.DYNAMICS.lorenz96_dt, "stride": 5,
                "transient": config.DYNAMICS.lorenz96_transient}
    if isinstance(system, ExternalSpec):
        return {"steps": None, "dt": 1.0, "stride": 1, "transient": 0}
    if system.kind == "ks":
        return {"steps": 6000, "dt": config.DYNAMICS.ks_dt, "stride": 1, "transient": config.DYNAMICS.ks_transient}
    return {"steps": 6000, "dt": 1.0, "stride": 1, "transient": 100}


def _parse_grid(grid: Any) -> GridAxes:
    if grid == "desk":
        return DESK_GRID
    if grid == "full":
        return FULL_GRID
    if isinstance(grid, dict):
        unknown = set(grid) - {"n_r", "rho", "sparsity_p", "leak_alpha"}
        if unknown:
            raise ConfigError(f"unknown grid axes: {sorted(unknown)}")
        return GridAxes(**{name: tuple(grid.get(name, ())) for name in ("n_r", "rho", "sparsity_p", "leak_alpha")})
    raise ConfigError(f"grid must be 'desk', 'full' or an axes object, got {grid!r}")


def _provenance(cfg: ExperimentConfig, payload: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(payload)
    out["config"] = cfg.resolved()
    out["master_seed"] = cfg.master_seed
    return out


def _stage(out_dir: str, cfg: ExperimentConfig, name: str, fn: Callable[[], Any]) -> Any:
    """Runs one pipeline stage and records its outcome in the manifest."""
    logger.info("Stage '%s' started", name)
    start = time.perf_counter()
    try:
        result = fn()
    except Exception as e:
        artifacts.update_manifest(out_dir, name, {
            "status": "failed", "error": f"{type(e).__name__}: {e}",
            "seconds": round(time.perf_counter() - start, 3),
        }, cfg.resolved())
        logger.error("Stage '%s' failed: %s", name, e)
        if isinstance(e, ConfigError):
            raise
        raise StageError(name, e) from e
    artifacts.update_manifest(out_dir, name, {"status": "ok", "seconds": round(time.perf_counter() - start, 3)},
                              cfg.resolved())
    logger.info("Stage '%s' finished in %.1fs", name, time.perf_counter() - start)
    return result


def _simulate(cfg: ExperimentConfig):
    sim = cfg.simulation
    if isinstance(cfg.system, ExternalSpec):
        return load_csv(cfg.system.path, sim["dt"])
    return simulate(cfg.system, steps=int(sim["steps"]), seed=cfg.master_seed, dt=sim["dt"],
                    transient=sim["transient"], stride=int(sim["stride"]))


def cmd_simulate(cfg: ExperimentConfig) -> str:
    """Writes trajectory.csv and its metadata JSON; returns the CSV path."""
    out_dir = artifacts.ensure_dir(cfg.output_dir)
    traj = _simulate(cfg)
    path = os.path.join(out_dir, "trajectory.csv")
    write_csv(traj, path)
    artifacts.write_json(os.path.join(out_dir, "trajectory.json"), _provenance(cfg, {
        "rows": traj.T, "columns": traj.d, "dt": traj.dt, "source": traj.source,
    }))
    logger.info("Wrote %s (%d x %d, dt=%g)", path, traj.T, traj.d, traj.dt)
    return path


def _lyapunov_stage(cfg: ExperimentConfig, traj, out_dir: str) -> Dict[str, Any]:
    ly = cfg.lyapunov
    overrides = EmbeddingParams(**ly["overrides"]) if ly["overrides"] is not None else None
    estimate = estimate_lyapunov(traj, overrides=overrides, tau_max=ly["tau_max"], m_max=ly["m_max"],
                                 j_max=ly["j_max"], m_refs=ly["m_refs"])
    payload = estimate.to_dict()
    if not isinstance(cfg.system, ExternalSpec) and ly["oracle_steps"]:
        oracle = benettin_oracle(cfg.system, steps=int(ly["oracle_steps"]), seed=cfg.master_seed,
                                 dt=cfg.simulation["dt"])
        payload["oracle"] = {"lambda_max": oracle.lambda_max, "stderr": oracle.stderr, "windows": oracle.windows}
    artifacts.write_json(os.path.join(out_dir, "lyapunov.json"), _provenance(cfg, payload))
    artifacts.write_table(os.path.join(out_dir, "divergence.csv"), estimate.curve.to_table())
    return payload


def _schedule(cfg: ExperimentConfig, table) -> Tuple[EpsilonSchedule, Dict[str, Any]]:
    spec = cfg.rashomon
    if "eps" in spec:
        eps = np.asarray(spec["eps"], dtype=float)
        if eps.shape != (cfg.horizons,):
            raise ConfigError(f"explicit eps needs {cfg.horizons} entries")
        return EpsilonSchedule.explicit(eps), {"source": "explicit"}
    if "schedule" in spec:
        s = spec["schedule"]
        if set(s) != {"alpha", "beta", "gamma"}:
            raise ConfigError("schedule needs exactly alpha, beta and gamma")
        return epsilon_schedule(table, s["alpha"], s["beta"], s["gamma"]), {"source": "fixed"}
    band = tuple(spec.get("band", default_band(table.pool_size)))
    result = calibrate_schedule(table, band)
    return result.schedule, {"source": "calibrated", "calibration": result.gap_report()}


def _write_sets(path: str, sets: RashomonSets) -> None:
    artifacts.write_table(path, sets.to_table())


def _read_sets(path: str, pool_size: int) -> RashomonSets:
    frame = artifacts.read_table(path, dtype={"members": str})
    members = [np.array([int(v) for v in cell.split()], dtype=int) for cell in frame["members"].fillna("")]
    return RashomonSets(members, frame["eps_k"].to_numpy(float), frame["l_star"].to_numpy(float), pool_size)


def _utility_rows(cfg: ExperimentConfig, bank, sets, selection, decision_cfg) -> Dict[str, List[Any]]:
    u, space = cfg.utility(), cfg.action_space()
    active = decision_cfg.p_k > 0
    optimizer = cfg.decision["optimizer"]
    rows: Dict[str, List[Any]] = {"strategy": [], "horizon": [], "utility": []}
    strategies = {name: selection.baselines[name]["model"] for name in ("chosen", "single_best", "random", "oracle")}
    for name, model in strategies.items():
        row = utility_matrix(bank, [model], u, space, active, optimizer, cfg.master_seed)[0]
        for k in np.flatnonzero(active):
            rows["strategy"].append(name)
            rows["horizon"].append(int(k) + 1)
            rows["utility"].append(row[k])
    ensemble = ensemble_utility(bank, sets, u, space, active, optimizer, cfg.master_seed)
    for k in np.flatnonzero(active):
        rows["strategy"].append("ensemble")
        rows["horizon"].append(int(k) + 1)
        rows["utility"].append(ensemble[k])
    return rows


def cmd_pipeline(cfg: ExperimentConfig) -> Dict[str, Any]:
    """
    simulate -> split -> train_pool -> lyapunov -> losses -> sets ->
    contraction -> multiplicity -> sensitivity -> selection -> sweep. A
    contraction fit that lacks usable horizons is recorded and the run
    continues.
    """
    out_dir = artifacts.ensure_dir(cfg.output_dir)
    artifacts.write_json(os.path.join(out_dir, "config.resolved.json"), cfg.resolved())
    logger.info("Pipeline for %s into %s (seed %d, %d threads)", cfg.system.kind, out_dir, cfg.master_seed,
                cfg.threads)

    traj = _stage(out_dir, cfg, "simulate", lambda: _simulate(cfg))
    write_csv(traj, os.path.join(out_dir, "trajectory.csv"))

    def split_stage():
        split = split_standardize(traj, cfg.split)
        artifacts.write_json(os.path.join(out_dir, "split.json"), _provenance(cfg, {
            "train": split.train.T, "val": split.val.T, "test": split.test.T,
            "mean": split.mean, "std": split.std, "dt": traj.dt,
        }))
        return split

    split = _stage(out_dir, cfg, "split", split_stage)

    def pool_stage():
        configs = enumerate_grid(cfg.grid, **cfg.reservoir)
        pool = train_pool(configs, split.train, master_seed=cfg.master_seed, threads=cfg.threads, grid=cfg.grid)
        save_pool(pool, os.path.join(out_dir, "pool"))
        return pool

    pool = _stage(out_dir, cfg, "train_pool", pool_stage)
    lyap = _stage(out_dir, cfg, "lyapunov", lambda: _lyapunov_stage(cfg, split.train, out_dir))
    lambda_max, dt = float(lyap["lambda_max"]), traj.dt

    def losses_stage():
        bank = forecast_windows(pool, split.val, cfg.horizons, cfg.warmup, cfg.threads)
        table = losses_from_bank(bank)
        artifacts.write_table(os.path.join(out_dir, "loss_table.csv"), table.to_table())
        return bank, table

    val_bank, table = _stage(out_dir, cfg, "losses", losses_stage)

    def sets_stage():
        schedule, info = _schedule(cfg, table)
        sets = build_sets(table, schedule)
        artifacts.write_json(os.path.join(out_dir, "schedule.json"), _provenance(cfg, {**schedule.to_dict(), **info}))
        _write_sets(os.path.join(out_dir, "sets.csv"), sets)
        return schedule, sets

    schedule, sets = _stage(out_dir, cfg, "sets", sets_stage)

    def contraction_stage():
        try:
            fit = fit_contraction(sets).to_dict()
        except ChaosRashomonError as e:
            logger.warning("Contraction fit skipped: %s", e)
            fit = {"failed": str(e)}
        artifacts.write_json(os.path.join(out_dir, "contraction.json"), _provenance(cfg, fit))
        return fit

    contraction = _stage(out_dir, cfg, "contraction", contraction_stage)
    decision_cfg = cfg.decision_config(lambda_max, dt)

    def multiplicity_stage():
        report = ambiguity_and_agreement(val_bank, sets, decision_cfg.p_k, lambda_max=lambda_max, dt=dt)
        artifacts.write_json(os.path.join(out_dir, "multiplicity.json"), _provenance(cfg, report.to_dict()))
        artifacts.write_table(os.path.join(out_dir, "agreement.csv"),
                              {f"k{k + 1}": report.agreement[:, k] for k in range(cfg.horizons)})
        return report

    report = _stage(out_dir, cfg, "multiplicity", multiplicity_stage)

    def sensitivity_stage():
        curve = tolerance_sensitivity(val_bank, table, schedule, decision_cfg, cfg.utility(), cfg.action_space(),
                                      cfg.sensitivity_multipliers(), cfg.master_seed, cfg.decision["optimizer"])
        artifacts.write_table(os.path.join(out_dir, "sensitivity.csv"), curve.set_size_table())
        artifacts.write_table(os.path.join(out_dir, "sensitivity_utility.csv"), curve.utility_table())
        return curve

    _stage(out_dir, cfg, "sensitivity", sensitivity_stage)

    def selection_stage():
        test_bank = forecast_windows(pool, split.test, cfg.horizons, cfg.warmup, cfg.threads)
        selection = select_from_banks(val_bank, sets, decision_cfg, cfg.utility(), cfg.action_space(),
                                      int(cfg.decision["sample_size"]), cfg.master_seed, test_bank,
                                      cfg.decision["optimizer"])
        payload = selection.to_dict()
        payload["k_eff"] = decision_cfg.k_eff
        payload["lambda_max"] = lambda_max
        artifacts.write_json(os.path.join(out_dir, "selection.json"), _provenance(cfg, payload))
        artifacts.write_table(os.path.join(out_dir, "utility_by_horizon.csv"),
                              _utility_rows(cfg, test_bank, sets, selection, decision_cfg))
        return selection

    selection = _stage(out_dir, cfg, "selection", selection_stage)

    def sweep_stage():
        curve = sample_complexity_sweep(val_bank, sets, decision_cfg, cfg.utility(), cfg.action_space(),
                                        cfg.decision["sweep_sizes"], int(cfg.decision["sweep_repeats"]),
                                        cfg.master_seed, cfg.decision["optimizer"])
        artifacts.write_table(os.path.join(out_dir, "sample_complexity.csv"), curve.to_table())
        return curve

    _stage(out_dir, cfg, "sample_complexity", sweep_stage)
    logger.info("Pipeline finished: lambda_max=%.4f, chosen model %d", lambda_max, selection.chosen)
    return {
        "lambda_max": lambda_max,
        "sizes": sets.sizes.tolist(),
        "contraction": contraction,
        "rho_L": report.rho_L,
        "chosen": selection.chosen,
    }


def cmd_lyapunov(cfg: ExperimentConfig) -> Dict[str, Any]:
    out_dir = artifacts.ensure_dir(cfg.output_dir)
    traj = _simulate(cfg)
    return _lyapunov_stage(cfg, traj, out_dir)


def cmd_select(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Reruns selection on an existing pipeline directory with the config's decision settings."""
    out_dir = cfg.output_dir
    artifacts.require(out_dir, {
        "trajectory.csv": "simulate",
        "split.json": "split",
        os.path.join("pool", "manifest.json"): "train_pool",
        "lyapunov.json": "lyapunov",
        "sets.csv": "sets",
    })
    dt = float(artifacts.read_json(os.path.join(out_dir, "split.json"))["dt"])
    traj = load_csv(os.path.join(out_dir, "trajectory.csv"), dt)
    split = split_standardize(traj, cfg.split)
    pool = load_pool(os.path.join(out_dir, "pool"))
    sets = _read_sets(os.path.join(out_dir, "sets.csv"), len(pool))
    lambda_max = float(artifacts.read_json(os.path.join(out_dir, "lyapunov.json"))["lambda_max"])
    decision_cfg = cfg.decision_config(lambda_max, traj.dt)
    val_bank = forecast_windows(pool, split.val, sets.horizons, cfg.warmup, cfg.threads)
    test_bank = forecast_windows(pool, split.test, sets.horizons, cfg.warmup, cfg.threads)
    selection = select_from_banks(val_bank, sets, decision_cfg, cfg.utility(), cfg.action_space(),
                                  int(cfg.decision["sample_size"]), cfg.master_seed, test_bank,
                                  cfg.decision["optimizer"])
    payload = selection.to_dict()
    payload["k_eff"] = decision_cfg.k_eff
    artifacts.write_json(os.path.join(out_dir, "selection.json"), _provenance(cfg, payload))
    return payload


def _number(value: Any) -> float:
    # read_json gives None for NaN and strings for infinities
    return float("nan") if value is None else float(value)


def _forcing_dirs(out_dir: str) -> List[Tuple[float, str]]:
    found = []
    for path in glob.glob(os.path.join(out_dir, "F=*")):
        try:
            found.append((float(os.path.basename(path)[2:]), path))
        except ValueError:
            continue
    return sorted(found)


def cmd_sweep(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Runs the pipeline once per forcing value into F=<value>/ and reports."""
    if not isinstance(cfg.system, Lorenz96Spec):
        raise ConfigError("the forcing sweep needs a lorenz96 system")
    results = []
    for forcing in cfg.sweep["forcings"]:
        sub = copy.deepcopy(cfg)
        sub.system = replace(cfg.system, forcing=float(forcing))
        sub.output_dir = os.path.join(cfg.output_dir, f"F={float(forcing):g}")
        logger.info("Sweep: F=%g", forcing)
        results.append(cmd_pipeline(sub))
    cmd_report(cfg.output_dir)
    return results


def _report_run(out_dir: str) -> List[str]:
    artifacts.require(out_dir, {
        "sets.csv": "sets",
        "contraction.json": "contraction",
        "agreement.csv": "multiplicity",
        "multiplicity.json": "multiplicity",
        "sensitivity.csv": "sensitivity",
        "utility_by_horizon.csv": "selection",
    })
    fig_dir = artifacts.ensure_dir(os.path.join(out_dir, "figures"))
    written = []

    sets = artifacts.read_table(os.path.join(out_dir, "sets.csv"))
    contraction = artifacts.read_json(os.path.join(out_dir, "contraction.json"))
    sizes = sets["size"].to_numpy(float)
    horizons = sets["horizon"].to_numpy(int)
    with np.errstate(divide="ignore"):
        log_size = np.where(sizes > 0, np.log(np.maximum(sizes, 1)), np.nan)
    if "beta_lambda_hat" in contraction:
        fit = contraction["intercept"] - contraction["beta_lambda_hat"] * horizons
    else:
        fit = np.full(horizons.shape, np.nan)
    path = os.path.join(fig_dir, "set_size_vs_horizon.csv")
    artifacts.write_table(path, {"horizon": horizons, "size": sizes.astype(int), "log_size": log_size,
                                 "log_size_fit": fit})
    written.append(path)

    utilities = artifacts.read_table(os.path.join(out_dir, "utility_by_horizon.csv"))
    path = os.path.join(fig_dir, "utility_by_strategy.csv")
    wide = utilities.pivot(index="horizon", columns="strategy", values="utility").reset_index()
    artifacts.write_table(path, {name: wide[name].tolist() for name in wide.columns})
    written.append(path)

    agreement = artifacts.read_table(os.path.join(out_dir, "agreement.csv"))
    path = os.path.join(fig_dir, "agreement_matrix.csv")
    artifacts.write_table(path, {name: agreement[name].tolist() for name in agreement.columns})
    written.append(path)

    multiplicity = artifacts.read_json(os.path.join(out_dir, "multiplicity.json"))
    ambiguity = np.asarray(multiplicity["ambiguity_k"], dtype=float)
    path = os.path.join(fig_dir, "ambiguity_vs_horizon.csv")
    artifacts.write_table(path, {"horizon": np.arange(1, ambiguity.size + 1), "ambiguity_k": ambiguity})
    written.append(path)

    sensitivity = artifacts.read_table(os.path.join(out_dir, "sensitivity.csv"))
    path = os.path.join(fig_dir, "set_size_by_tolerance.csv")
    wide = sensitivity.pivot(index="horizon", columns="multiplier", values="size").reset_index()
    artifacts.write_table(path, {("horizon" if name == "horizon" else f"x{name:g}"): wide[name].tolist()
                                 for name in wide.columns})
    written.append(path)
    return written


def cmd_report(out_dir: str) -> List[str]:
    """
    Figure-ready CSVs for one run, or for every F=<value>/ run below
    `out_dir` plus the forcing-sweep summary.
    """
    sweep = _forcing_dirs(out_dir)
    if not sweep:
        written = _report_run(out_dir)
        logger.info("Report: wrote %d files under %s", len(written), out_dir)
        return written

    written: List[str] = []
    rows: Dict[str, List[Any]] = {"forcing": [], "lambda_hat": [], "lambda_oracle": [], "contraction_rate": [],
                                  "contraction_r2": [], "set_size_at_k20": [], "gain_over_single_best": [],
                                  "predictability_horizon": []}
    for forcing, path in sweep:
        written.extend(_report_run(path))
        artifacts.require(path, {"lyapunov.json": "lyapunov", "selection.json": "selection"})
        lyap = artifacts.read_json(os.path.join(path, "lyapunov.json"))
        baselines = artifacts.read_json(os.path.join(path, "selection.json"))["baselines"]
        contraction = artifacts.read_json(os.path.join(path, "contraction.json"))
        sets = artifacts.read_table(os.path.join(path, "sets.csv"))
        at = sets.loc[sets["horizon"] == min(20, int(sets["horizon"].max())), "size"]
        rows["forcing"].append(forcing)
        rows["lambda_hat"].append(lyap["lambda_max"])
        rows["lambda_oracle"].append(lyap.get("oracle", {}).get("lambda_max", float("nan")))
        rows["contraction_rate"].append(contraction.get("beta_lambda_hat", float("nan")))
        rows["contraction_r2"].append(contraction.get("r2", float("nan")))
        rows["set_size_at_k20"].append(int(at.iloc[0]))
        rows["gain_over_single_best"].append(
            _number(baselines["chosen"]["utility"]) - _number(baselines["single_best"]["utility"]))
        lambda_hat = float(lyap["lambda_max"])
        rows["predictability_horizon"].append(1.0 / lambda_hat if lambda_hat > 0 else float("inf"))
    summary = os.path.join(out_dir, "forcing_sweep_summary.csv")
    artifacts.write_table(summary, rows)
    written.append(summary)
    logger.info("Report: forcing sweep over %d values written to %s", len(sweep), summary)
    return written
