import os
from dotenv import load_dotenv
from dataclasses import dataclass, field
from typing import Tuple

# Load environment variables from .env file if present.
load_dotenv()


@dataclass(frozen=True)
class LoggingConfig:
    log_file: str = os.getenv('LOG_FILE', 'chaos_rashomon.log')
    log_level: str = os.getenv('LOG_LEVEL', 'INFO')

@dataclass(frozen=True)
class RuntimeConfig:
    threads: int = int(os.getenv('CR_THREADS', '1'))
    output_dir: str = os.getenv('CR_OUTPUT_DIR', 'runs')
    master_seed: int = int(os.getenv('CR_MASTER_SEED', '12345'))

@dataclass(frozen=True)
class DynamicsDefaults:
    lorenz96_dt: float = 0.01
    lorenz96_transient: int = 1000
    lorenz96_perturbation: float = 0.01
    ks_n: int = 64
    ks_length: float = 22.0 * 3.141592653589793
    ks_dt: float = 0.25
    ks_transient: int = 2000
    ks_amplitude: float = 0.1
    max_stable_dt: float = 0.05

@dataclass(frozen=True)
class ReservoirDefaults:
    input_scale: float = 0.5
    bias_std: float = 0.1
    ridge_lambda: float = 1e-6
    washout: int = 500
    warmup: int = 20
    power_iterations: int = 1000
    power_tolerance: float = 1e-9
    build_attempts: int = 8
    # densities above this are multiplied as dense arrays
    dense_threshold: float = 0.25

@dataclass(frozen=True)
class LyapunovDefaults:
    tau_max: int = 50
    m_max: int = 10
    j_max: int = 100
    m_refs: int = 1000
    theiler_factor: int = 10
    mi_max_bins: int = 64
    mi_floor_factor: float = 1.0
    fnn_rtol: float = 10.0
    fnn_atol: float = 2.0
    fnn_threshold: float = 0.01
    min_correlation: float = 0.99
    min_window: int = 5
    increment_band: float = 0.2
    oracle_delta0: float = 1e-8
    oracle_renorm_every: int = 10

@dataclass(frozen=True)
class RashomonDefaults:
    alpha_grid: Tuple[float, ...] = (0.02, 0.05, 0.1, 0.2, 0.4)
    beta_grid: Tuple[float, ...] = (0.0, 0.25, 0.5, 1.0, 2.0)
    gamma_grid: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.2)
    desk_band: Tuple[int, int] = (5, 50)
    full_band: Tuple[int, int] = (10, 100)
    min_windows: int = 10
    max_agreement_pairs: int = 500
    sensitivity_multipliers: Tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)

@dataclass(frozen=True)
class DecisionDefaults:
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    step: float = 0.05
    iters: int = 1000
    cem_population: int = 100
    cem_elite_frac: float = 0.1
    cem_generations: int = 50
    cem_var_tol: float = 1e-8
    softplus_sharpness: float = 50.0
    random_baseline_seeds: int = 50

@dataclass(frozen=True)
class GridAxes:
    n_r: Tuple[int, ...] = field(default_factory=tuple)
    rho: Tuple[float, ...] = field(default_factory=tuple)
    sparsity_p: Tuple[float, ...] = field(default_factory=tuple)
    leak_alpha: Tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "n_r": list(self.n_r),
            "rho": list(self.rho),
            "sparsity_p": list(self.sparsity_p),
            "leak_alpha": list(self.leak_alpha),
        }


# 6 x 6 x 5 x 6 = 1080 configurations
FULL_GRID = GridAxes(
    n_r=(100, 200, 400, 600, 800, 1000),
    rho=(0.5, 0.7, 0.9, 1.1, 1.3, 1.5),
    sparsity_p=(0.1, 0.3, 0.5, 0.7, 0.9),
    leak_alpha=(0.1, 0.3, 0.5, 0.7, 0.9, 1.0),
)

# 2 x 3 x 2 x 3 = 36 configurations
DESK_GRID = GridAxes(
    n_r=(200, 400),
    rho=(0.7, 0.9, 1.1),
    sparsity_p=(0.3, 0.7),
    leak_alpha=(0.3, 0.7, 1.0),
)

# Global aliases
LOG_FILE = LoggingConfig().log_file
LOG_LEVEL = LoggingConfig().log_level
THREADS = RuntimeConfig().threads
OUTPUT_DIR = RuntimeConfig().output_dir
MASTER_SEED = RuntimeConfig().master_seed
DYNAMICS = DynamicsDefaults()
RESERVOIR = ReservoirDefaults()
LYAPUNOV = LyapunovDefaults()
RASHOMON = RashomonDefaults()
DECISION = DecisionDefaults()
