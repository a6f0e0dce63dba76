import numpy as np
import pytest

from dynamics import ExternalSpec, LogisticSpec, Lorenz96Spec, Trajectory, simulate_logistic, simulate_lorenz96
from errors import DegenerateSeriesError, InsufficientDataError, PreconditionError, UnsupportedError
from lyapunov import (
    DivergenceCurve,
    EmbeddingParams,
    benettin_oracle,
    divergence_curve,
    embed,
    estimate_lyapunov,
    false_nearest_neighbors,
    false_neighbor_fractions,
    fit_lyapunov,
    mutual_information_bias,
    mutual_information_curve,
    mutual_information_delay,
    select_delay,
)


@pytest.fixture(scope="module")
def logistic_series():
    return simulate_logistic(r=4.0, steps=20000, seed=5)


def test_embed_stacks_delayed_copies():
    x = np.arange(10.0)
    points = embed(x, m=3, tau=2)
    assert points.shape == (6, 3)
    np.testing.assert_array_equal(points[0], [0.0, 2.0, 4.0])
    np.testing.assert_array_equal(points[-1], [5.0, 7.0, 9.0])


def test_embedding_params_default_theiler_window():
    assert EmbeddingParams(m=3, tau=4).theiler == 40
    with pytest.raises(PreconditionError):
        EmbeddingParams(m=0, tau=1)


def test_mutual_information_peaks_at_zero_lag():
    noise = np.random.default_rng(0).standard_normal(5000)
    info = mutual_information_curve(noise, tau_max=10)
    assert info[0] == pytest.approx(info.max())
    assert np.all(info[1:] < 0.1 * info[0])


def test_select_delay_returns_a_lag_in_range(logistic_series):
    tau, fallback = select_delay(logistic_series, tau_max=20)
    assert 1 <= tau <= 20
    assert isinstance(fallback, bool)


def test_constant_series_is_degenerate():
    with pytest.raises(DegenerateSeriesError):
        mutual_information_curve(np.ones(500), tau_max=5)
    with pytest.raises(DegenerateSeriesError):
        false_neighbor_fractions(np.ones(500), tau=1, m_max=3)


def test_logistic_map_needs_one_dimension(logistic_series):
    fractions = false_neighbor_fractions(logistic_series, tau=1, m_max=3)
    assert fractions[0] < 0.01
    assert false_nearest_neighbors(logistic_series, tau=1, m_max=3) == 1


def test_white_noise_is_full_of_false_neighbours():
    noise = np.random.default_rng(2).uniform(size=3000)
    assert false_neighbor_fractions(noise, tau=1, m_max=1)[0] > 0.5


def test_fit_recovers_the_slope_of_a_linear_curve():
    j = np.arange(30)
    curve = DivergenceCurve(d_j=-5.0 + 0.3 * j, dt=0.1)
    estimate = fit_lyapunov(curve)
    assert estimate.lambda_max == pytest.approx(3.0, rel=1e-9)
    assert (estimate.fit_start, estimate.fit_end) == (0, 30)
    assert estimate.r2 == pytest.approx(1.0)
    assert not estimate.low_confidence


def test_fit_stops_where_the_curve_saturates():
    j = np.arange(40)
    curve = DivergenceCurve(d_j=np.minimum(0.3 * j, 6.0), dt=1.0)
    estimate = fit_lyapunov(curve)
    assert (estimate.fit_start, estimate.fit_end) == (0, 21)
    assert estimate.lambda_max == pytest.approx(0.3, rel=1e-9)


def test_fit_without_linear_region_is_low_confidence():
    curve = DivergenceCurve(d_j=(-1.0) ** np.arange(20), dt=1.0)
    estimate = fit_lyapunov(curve)
    assert estimate.low_confidence
    assert 0.0 <= estimate.r2 <= 1.0


def test_divergence_curve_requires_admissible_neighbours():
    points = np.arange(30.0)[:, None]
    with pytest.raises(InsufficientDataError):
        divergence_curve(points, dt=1.0, theiler=40, m_refs=10, j_max=5)


def test_divergence_curve_records_pairs_outside_theiler_window(logistic_series):
    points = embed(logistic_series, m=1, tau=1)
    curve = divergence_curve(points, dt=1.0, theiler=10, m_refs=200, j_max=8)
    assert curve.j_max == 8
    assert np.all(np.abs(curve.pairs[:, 0] - curve.pairs[:, 1]) > 10)
    assert np.all(np.diff(curve.d_j[:6]) > 0)


@pytest.mark.slow
def test_rosenstein_estimate_for_logistic_map():
    estimate = estimate_lyapunov(simulate_logistic(r=4.0, steps=100000, seed=0))
    assert estimate.lambda_max == pytest.approx(np.log(2.0), abs=0.05)
    assert estimate.params.m <= 3
    assert estimate.params.tau == 1


def test_benettin_oracle_for_logistic_map():
    oracle = benettin_oracle(LogisticSpec(4.0), steps=100000, seed=1)
    assert oracle.lambda_max == pytest.approx(np.log(2.0), abs=0.05)
    assert oracle.windows == 10000
    assert oracle.stderr > 0


def test_benettin_oracle_is_negative_at_a_stable_fixed_point():
    oracle = benettin_oracle(Lorenz96Spec(d=8, forcing=0.5), steps=2000, seed=0, transient=0,
                             initial_state=np.full(8, 0.5))
    assert oracle.lambda_max < 0


def test_benettin_oracle_needs_equations():
    with pytest.raises(UnsupportedError):
        benettin_oracle(ExternalSpec("series.csv"), steps=100, seed=0)


def test_estimate_on_trajectory_uses_first_coordinate():
    rng = np.random.default_rng(4)
    logistic = simulate_logistic(steps=3000, seed=3).data[:, 0]
    data = np.column_stack([logistic, rng.standard_normal(3000)])
    estimate = estimate_lyapunov(Trajectory(data, 1.0), overrides=EmbeddingParams(m=1, tau=1), j_max=8, m_refs=300)
    assert estimate.lambda_max > 0.3
    assert estimate.curve.j_max == 8


@pytest.mark.parametrize("rate", [0.1, 0.5, 1.0, 2.0])
def test_fit_recovers_injected_exponential_divergence(rate):
    dt = 0.05
    j = np.arange(40)
    curve = DivergenceCurve(d_j=np.log(1e-6 * np.exp(rate * dt * j)), dt=dt)
    assert fit_lyapunov(curve).lambda_max == pytest.approx(rate, rel=1e-9)


def test_estimate_is_unchanged_by_rescaling_the_series(logistic_series):
    params = EmbeddingParams(m=1, tau=1)
    base = estimate_lyapunov(logistic_series, overrides=params, j_max=8, m_refs=300)
    scaled = Trajectory(4.0 * logistic_series.data, logistic_series.dt, "external")
    rescaled = estimate_lyapunov(scaled, overrides=params, j_max=8, m_refs=300)
    assert rescaled.lambda_max == pytest.approx(base.lambda_max, rel=1e-9)
    np.testing.assert_allclose(rescaled.curve.d_j - base.curve.d_j, np.log(4.0), atol=1e-9)


def test_mutual_information_delay_matches_select_delay(logistic_series):
    assert mutual_information_delay(logistic_series, tau_max=15) == select_delay(logistic_series, tau_max=15)[0]


def test_mutual_information_minimum_of_a_sine_is_a_quarter_period():
    t = np.arange(1000)
    tau, fallback = select_delay(np.sin(2.0 * np.pi * t / 100.0), tau_max=50)
    assert tau == pytest.approx(25, abs=3)
    assert not fallback


def test_memoryless_series_falls_back_to_unit_delay(logistic_series):
    noise = np.random.default_rng(8).standard_normal(20000)
    assert select_delay(noise, tau_max=20) == (1, True)
    assert select_delay(logistic_series, tau_max=20) == (1, True)


def test_estimator_floor_matches_independent_samples():
    noise = np.random.default_rng(9).uniform(size=100000)
    info = mutual_information_curve(noise, tau_max=10)
    bias = mutual_information_bias(noise.size, 10)
    np.testing.assert_allclose(info[1:], bias[1:], rtol=0.1)


def test_sine_needs_two_dimensions():
    t = np.arange(2000)
    sine = np.sin(2.0 * np.pi * t / 37.3)
    fractions = false_neighbor_fractions(sine, tau=9, m_max=3)
    assert fractions[0] > 0.01
    assert fractions[1] < 0.01
    assert false_nearest_neighbors(sine, tau=9, m_max=3) == 2


def test_white_noise_never_settles_on_a_dimension():
    noise = np.random.default_rng(3).standard_normal(3000)
    assert false_nearest_neighbors(noise, tau=1, m_max=3) == 3


def test_falling_line_is_not_a_linear_growth_region():
    curve = DivergenceCurve(d_j=2.0 - 0.4 * np.arange(20), dt=1.0)
    estimate = fit_lyapunov(curve)
    assert estimate.low_confidence
    assert estimate.lambda_max == pytest.approx(-0.4, rel=1e-9)


@pytest.fixture(scope="module")
def lorenz96_estimates():
    estimates = {}
    for forcing in (5.0, 10.0, 15.0, 20.0, 25.0):
        series = simulate_lorenz96(d=40, forcing=forcing, steps=20000, seed=0, transient=1000, stride=5)
        oracle = benettin_oracle(Lorenz96Spec(d=40, forcing=forcing), steps=20000, seed=0)
        estimates[forcing] = (estimate_lyapunov(series).lambda_max, oracle.lambda_max)
    return estimates


@pytest.mark.slow
@pytest.mark.parametrize("forcing", [10.0, 20.0])
def test_rosenstein_agrees_with_benettin_on_lorenz96(lorenz96_estimates, forcing):
    estimate, oracle = lorenz96_estimates[forcing]
    assert estimate == pytest.approx(oracle, abs=0.1)


@pytest.mark.slow
def test_lorenz96_exponent_grows_with_forcing(lorenz96_estimates):
    estimates = [lorenz96_estimates[f][0] for f in sorted(lorenz96_estimates)]
    oracles = [lorenz96_estimates[f][1] for f in sorted(lorenz96_estimates)]
    assert np.all(np.diff(estimates) > 0)
    assert np.all(np.diff(oracles) > 0)
