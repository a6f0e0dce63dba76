"""
Synthetic chaotic systems and time-series plumbing.

Lorenz-96:  dx_i/dt = (x_{i+1} - x_{i-2}) * x_{i-1} - x_i + F, cyclic indices,
            classical 4th-order Runge-Kutta.
Kuramoto-Sivashinsky:  u_t = -u*u_x - u_xx - u_xxxx on a periodic domain of
            length L, Fourier pseudo-spectral in space, ETDRK4 in time
            (coefficients by contour integral).
Logistic map:  x_{t+1} = r * x_t * (1 - x_t), dt = 1.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

import config
from errors import ConfigError, DivergedIntegrationError, ParseError, ShapeError

logger = logging.getLogger(__name__)

SOURCES = ("lorenz96", "ks", "logistic", "external")


@dataclass(frozen=True)
class Trajectory:
    """T x d real time series sampled every `dt` time units."""
    data: np.ndarray
    dt: float
    source: str = "external"

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ShapeError(f"trajectory data must be 2-D, got {data.ndim}-D")
        if data.shape[0] < 2 or data.shape[1] < 1:
            raise ShapeError(f"trajectory needs T >= 2 and d >= 1, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("trajectory contains non-finite entries")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"sampling interval must be positive, got {self.dt}")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown trajectory source '{self.source}'")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def segment(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.data[start:stop], self.dt, self.source)


@dataclass(frozen=True)
class Lorenz96Spec:
    d: int = 40
    forcing: float = 10.0
    kind: str = field(default="lorenz96", init=False)

    def __post_init__(self) -> None:
        if self.d < 4:
            raise ConfigError(f"lorenz96 needs d >= 4, got {self.d}")
        if not self.forcing > 0:
            raise ConfigError(f"lorenz96 forcing must be positive, got {self.forcing}")


@dataclass(frozen=True)
class KSSpec:
    n: int = config.DYNAMICS.ks_n
    length: float = config.DYNAMICS.ks_length
    kind: str = field(default="ks", init=False)

    def __post_init__(self) -> None:
        if self.n < 8 or self.n % 2:
            raise ConfigError(f"ks needs an even grid with n >= 8, got {self.n}")
        if not self.length > 0:
            raise ConfigError(f"ks domain length must be positive, got {self.length}")


@dataclass(frozen=True)
class LogisticSpec:
    r: float = 4.0
    kind: str = field(default="logistic", init=False)

    def __post_init__(self) -> None:
        if not 0 < self.r <= 4:
            raise ConfigError(f"logistic parameter must lie in (0, 4], got {self.r}")


@dataclass(frozen=True)
class ExternalSpec:
    path: str
    kind: str = field(default="external", init=False)


SystemSpec = Union[Lorenz96Spec, KSSpec, LogisticSpec, ExternalSpec]


def parse_system_spec(payload: Dict[str, Any]) -> SystemSpec:
    kind = payload.get("kind")
    params = {key: value for key, value in payload.items() if key != "kind"}
    builders = {
        "lorenz96": Lorenz96Spec,
        "ks": KSSpec,
        "logistic": LogisticSpec,
        "external": ExternalSpec,
    }
    if kind not in builders:
        raise ConfigError(f"unknown system kind '{kind}'")
    try:
        return builders[kind](**params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for system '{kind}': {e}") from e


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2

    def __post_init__(self) -> None:
        for name in ("train_frac", "val_frac", "test_frac"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {total!r}")


@dataclass(frozen=True)
class StandardizedSplit:
    train: Trajectory
    val: Trajectory
    test: Trajectory
    mean: np.ndarray
    std: np.ndarray

    def apply(self, data: np.ndarray) -> np.ndarray:
        return (np.asarray(data, dtype=float) - self.mean) / self.std

    def invert(self, data: np.ndarray) -> np.ndarray:
        return np.asarray(data, dtype=float) * self.std + self.mean


class Lorenz96Integrator:
    def __init__(self, forcing: float, dt: float) -> None:
        self.forcing = forcing
        self.dt = dt

    def tendency(self, x: np.ndarray) -> np.ndarray:
        return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + self.forcing

    def step(self, x: np.ndarray) -> np.ndarray:
        dt = self.dt
        k1 = self.tendency(x)
        k2 = self.tendency(x + 0.5 * dt * k1)
        k3 = self.tendency(x + 0.5 * dt * k2)
        k4 = self.tendency(x + dt * k3)
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class KSIntegrator:
    """ETDRK4 stepper working on real-FFT coefficients."""

    def __init__(self, n: int, length: float, dt: float, contour_points: int = 32) -> None:
        self.n = n
        self.dt = dt
        k = 2.0 * np.pi / length * np.arange(n // 2 + 1)
        linear = k ** 2 - k ** 4
        # the Nyquist mode has no well-defined derivative
        k_deriv = k.copy()
        k_deriv[-1] = 0.0

        self.E = np.exp(dt * linear)
        self.E2 = np.exp(dt * linear / 2.0)
        roots = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
        LR = dt * linear[:, None] + roots[None, :]
        expLR = np.exp(LR)
        self.Q = dt * np.real(np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=1))
        self.f1 = dt * np.real(np.mean((-4.0 - LR + expLR * (4.0 - 3.0 * LR + LR ** 2)) / LR ** 3, axis=1))
        self.f2 = dt * np.real(np.mean((2.0 + LR + expLR * (-2.0 + LR)) / LR ** 3, axis=1))
        self.f3 = dt * np.real(np.mean((-4.0 - 3.0 * LR - LR ** 2 + expLR * (4.0 - LR)) / LR ** 3, axis=1))
        self.g = -0.5j * k_deriv

    def _nonlinear(self, v: np.ndarray) -> np.ndarray:
        u = np.fft.irfft(v, n=self.n)
        return self.g * np.fft.rfft(u * u)

    def step_spectral(self, v: np.ndarray) -> np.ndarray:
        Nv = self._nonlinear(v)
        a = self.E2 * v + self.Q * Nv
        Na = self._nonlinear(a)
        b = self.E2 * v + self.Q * Na
        Nb = self._nonlinear(b)
        c = self.E2 * a + self.Q * (2.0 * Nb - Nv)
        Nc = self._nonlinear(c)
        return self.E * v + Nv * self.f1 + 2.0 * (Na + Nb) * self.f2 + Nc * self.f3

    def step(self, u: np.ndarray) -> np.ndarray:
        return np.fft.irfft(self.step_spectral(np.fft.rfft(u)), n=self.n)


class LogisticMap:
    def __init__(self, r: float = 4.0) -> None:
        self.r = r

    def step(self, x: np.ndarray) -> np.ndarray:
        return self.r * x * (1.0 - x)


def simulate_lorenz96(
    d: int = 40,
    forcing: float = 10.0,
    dt: float = config.DYNAMICS.lorenz96_dt,
    steps: int = 1000,
    seed: int = 0,
    transient: int = config.DYNAMICS.lorenz96_transient,
    initial_state: Optional[np.ndarray] = None,
    perturbation: float = config.DYNAMICS.lorenz96_perturbation,
    stride: int = 1,
) -> Trajectory:
    """
    Integrates Lorenz-96 and records `steps` rows, one every `stride` RK4 steps,
    after discarding `transient` steps. Without an explicit initial state the
    run starts from x = F with a seeded perturbation on one component.
    """
    Lorenz96Spec(d, forcing)
    if not 0 < dt <= config.DYNAMICS.max_stable_dt:
        raise ConfigError(f"lorenz96 dt must lie in (0, {config.DYNAMICS.max_stable_dt}], got {dt}")
    if steps < 2 or stride < 1 or transient < 0:
        raise ConfigError(f"bad run length: steps={steps}, stride={stride}, transient={transient}")

    if initial_state is None:
        rng = np.random.default_rng(seed)
        x = np.full(d, float(forcing))
        x[rng.integers(d)] += perturbation * rng.standard_normal()
    else:
        x = np.array(initial_state, dtype=float).reshape(d)

    integrator = Lorenz96Integrator(forcing, dt)
    rows = np.empty((steps, d))
    total = transient + (steps - 1) * stride
    for step in range(total + 1):
        if step >= transient and (step - transient) % stride == 0:
            rows[(step - transient) // stride] = x
        if step == total:
            break
        x = integrator.step(x)
        if not np.all(np.isfinite(x)):
            logger.error("Lorenz-96 diverged at step %d (F=%s, dt=%s)", step + 1, forcing, dt)
            raise DivergedIntegrationError("lorenz96", step + 1)

    logger.debug("Simulated Lorenz-96 d=%d F=%s: %d rows", d, forcing, steps)
    return Trajectory(rows, dt * stride, "lorenz96")


def simulate_ks(
    n: int = config.DYNAMICS.ks_n,
    length: float = config.DYNAMICS.ks_length,
    dt: float = config.DYNAMICS.ks_dt,
    steps: int = 1000,
    seed: int = 0,
    transient: int = config.DYNAMICS.ks_transient,
    initial_state: Optional[np.ndarray] = None,
    amplitude: float = config.DYNAMICS.ks_amplitude,
    stride: int = 1,
) -> Trajectory:
    """
    Integrates Kuramoto-Sivashinsky with ETDRK4. Without an explicit initial
    state the run starts from a seeded random field of the given amplitude.
    """
    KSSpec(n, length)
    if not dt > 0:
        raise ConfigError(f"ks dt must be positive, got {dt}")
    if steps < 2 or stride < 1 or transient < 0:
        raise ConfigError(f"bad run length: steps={steps}, stride={stride}, transient={transient}")

    if initial_state is None:
        rng = np.random.default_rng(seed)
        u0 = amplitude * rng.standard_normal(n)
    else:
        u0 = np.array(initial_state, dtype=float).reshape(n)

    integrator = KSIntegrator(n, length, dt)
    v = np.fft.rfft(u0)
    rows = np.empty((steps, n))
    total = transient + (steps - 1) * stride
    for step in range(total + 1):
        if step >= transient and (step - transient) % stride == 0:
            rows[(step - transient) // stride] = np.fft.irfft(v, n=n)
        if step == total:
            break
        v = integrator.step_spectral(v)
        if not np.all(np.isfinite(v)):
            logger.error("Kuramoto-Sivashinsky diverged at step %d (n=%d, dt=%s)", step + 1, n, dt)
            raise DivergedIntegrationError("ks", step + 1)

    logger.debug("Simulated KS n=%d L=%.3f: %d rows", n, length, steps)
    return Trajectory(rows, dt * stride, "ks")


def simulate_logistic(
    r: float = 4.0,
    steps: int = 1000,
    seed: int = 0,
    transient: int = 100,
    initial_state: Optional[float] = None,
) -> Trajectory:
    LogisticSpec(r)
    if steps < 2 or transient < 0:
        raise ConfigError(f"bad run length: steps={steps}, transient={transient}")
    x = float(np.random.default_rng(seed).uniform(0.1, 0.9)) if initial_state is None else float(initial_state)
    for _ in range(transient):
        x = r * x * (1.0 - x)
    rows = np.empty(steps)
    for i in range(steps):
        rows[i] = x
        x = r * x * (1.0 - x)
    return Trajectory(rows, 1.0, "logistic")


def simulate(
    spec: SystemSpec,
    steps: int,
    seed: int,
    dt: Optional[float] = None,
    transient: Optional[int] = None,
    stride: int = 1,
) -> Trajectory:
    """Dispatches on the system variant; external specs are loaded from CSV."""
    if isinstance(spec, Lorenz96Spec):
        return simulate_lorenz96(
            spec.d, spec.forcing,
            dt=config.DYNAMICS.lorenz96_dt if dt is None else dt,
            steps=steps, seed=seed,
            transient=config.DYNAMICS.lorenz96_transient if transient is None else transient,
            stride=stride,
        )
    if isinstance(spec, KSSpec):
        return simulate_ks(
            spec.n, spec.length,
            dt=config.DYNAMICS.ks_dt if dt is None else dt,
            steps=steps, seed=seed,
            transient=config.DYNAMICS.ks_transient if transient is None else transient,
            stride=stride,
        )
    if isinstance(spec, LogisticSpec):
        return simulate_logistic(spec.r, steps=steps, seed=seed, transient=100 if transient is None else transient)
    return load_csv(spec.path, 1.0 if dt is None else dt)


def _is_number(cell: Any) -> bool:
    try:
        float(cell)
        return True
    except (TypeError, ValueError):
        return False


def load_csv(path: str, dt: float) -> Trajectory:
    """
    Reads a rectangular numeric CSV (one time step per row). A first row in
    which no cell parses as a number is treated as a header. Rows and columns
    in error messages are 1-based positions in the file.
    """
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"empty file {path}") from e
    except pd.errors.ParserError as e:
        raise ParseError(f"ragged rows in {path}: {e}") from e

    first_data_row = 1
    if len(frame) and not any(_is_number(cell) for cell in frame.iloc[0]):
        frame = frame.iloc[1:]
        first_data_row = 2
    if frame.empty:
        raise ParseError(f"no data rows in {path}")

    raw = frame.to_numpy(dtype=object)
    missing = np.array([[cell is None or (isinstance(cell, float) and np.isnan(cell)) or str(cell).strip() == ""
                         for cell in row] for row in raw], dtype=bool)
    if missing.any():
        i, j = np.argwhere(missing)[0]
        raise ParseError("ragged row or empty cell", row=int(i) + first_data_row, column=int(j) + 1)

    numeric = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(numeric)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ParseError(f"non-numeric cell '{raw[i, j]}'", row=int(i) + first_data_row, column=int(j) + 1)

    logger.info("Loaded %s: %d rows x %d columns", path, numeric.shape[0], numeric.shape[1])
    return Trajectory(numeric, dt, "external")


def write_csv(traj: Trajectory, path: str) -> None:
    frame = pd.DataFrame(traj.data, columns=[f"x{i}" for i in range(traj.d)])
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def split_standardize(traj: Trajectory, spec: SplitSpec) -> StandardizedSplit:
    """
    Carves contiguous train/val/test segments and standardizes all three with
    the train segment's moments. Zero-variance channels get std = 1.
    """
    n_train = int(round(traj.T * spec.train_frac))
    n_val = int(round(traj.T * spec.val_frac))
    n_test = traj.T - n_train - n_val
    if min(n_train, n_val, n_test) < 2:
        raise ShapeError(f"segments {n_train}/{n_val}/{n_test} of T={traj.T}: each needs at least 2 rows")

    data = traj.data
    mean = data[:n_train].mean(axis=0)
    std = data[:n_train].std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    scaled = (data - mean) / std

    logger.debug("Split T=%d into %d/%d/%d rows", traj.T, n_train, n_val, n_test)
    return StandardizedSplit(
        train=Trajectory(scaled[:n_train], traj.dt, traj.source),
        val=Trajectory(scaled[n_train:n_train + n_val], traj.dt, traj.source),
        test=Trajectory(scaled[n_train + n_val:], traj.dt, traj.source),
        mean=mean,
        std=std,
    )
