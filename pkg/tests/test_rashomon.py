import numpy as np
import pytest

from dynamics import Trajectory
from errors import ConfigError, DegenerateColumnError, InsufficientDataError, ShapeError
from rashomon import (
    EpsilonSchedule,
    ForecastBank,
    HorizonLossTable,
    RashomonSets,
    ambiguity_and_agreement,
    build_sets,
    calibrate_schedule,
    default_band,
    epsilon_schedule,
    fit_contraction,
    forecast_windows,
    horizon_weights,
    losses_from_bank,
    lyapunov_weighted_ratio,
    tolerance_sweep,
    window_anchors,
)
from reservoir import ModelPool, ReservoirConfig


def _table(seed=0, models=30, horizons=6):
    rng = np.random.default_rng(seed)
    # losses grow with the horizon like a chaotic error would
    base = rng.uniform(0.5, 1.5, size=(models, 1))
    return HorizonLossTable(base * np.exp(0.3 * np.arange(1, horizons + 1))[None, :]
                            + rng.uniform(0, 0.1, size=(models, horizons)), n_eval=20)


def _sets_with_sizes(sizes, pool_size=100):
    members = [np.arange(s) for s in sizes]
    zeros = np.zeros(len(sizes))
    return RashomonSets(members, zeros, zeros, pool_size)


def test_window_anchors_are_non_overlapping():
    anchors = window_anchors(100, horizons=5, warmup=20)
    np.testing.assert_array_equal(anchors, np.arange(16) * 5)
    assert anchors[-1] + 20 + 5 <= 100
    assert window_anchors(10, horizons=5, warmup=20).size == 0


def test_too_few_windows_is_a_config_error():
    pool = ModelPool([None], [ReservoirConfig(n_r=10, rho=0.9, sparsity_p=0.5, leak_alpha=1.0)], ["failed"], 0)
    with pytest.raises(ConfigError):
        forecast_windows(pool, Trajectory(np.random.default_rng(0).standard_normal((50, 2)), 1.0), 5, warmup=20)


def test_failed_models_get_infinite_losses():
    pool = ModelPool([None], [ReservoirConfig(n_r=10, rho=0.9, sparsity_p=0.5, leak_alpha=1.0)], ["failed"], 0)
    data = np.random.default_rng(0).standard_normal((200, 2))
    bank = forecast_windows(pool, Trajectory(data, 1.0), 5, warmup=20, threads=1)
    assert bank.truth.shape == (bank.n_windows, 5, 2)
    np.testing.assert_array_equal(bank.truth[0], data[20:25])
    assert np.all(np.isposinf(losses_from_bank(bank).losses))
    assert bank.scale == pytest.approx(np.sqrt(np.mean(np.var(data, axis=0))))


def test_losses_from_bank_average_squared_error():
    truth = np.zeros((4, 2, 3))
    forecasts = np.stack([truth, truth + 1.0, truth])
    forecasts[2, 1, 1, :] = np.inf
    table = losses_from_bank(ForecastBank(truth, forecasts, np.arange(4), warmup=20))
    np.testing.assert_allclose(table.losses[0], [0.0, 0.0])
    np.testing.assert_allclose(table.losses[1], [3.0, 3.0])
    assert table.losses[2, 0] == 0.0 and np.isposinf(table.losses[2, 1])
    assert table.n_eval == 4


def test_epsilon_schedule_formula():
    table = _table()
    schedule = epsilon_schedule(table, alpha=0.1, beta=0.5, gamma=0.2)
    k = np.arange(1, 7)
    delta = table.losses.max(axis=0) - table.losses.min(axis=0)
    np.testing.assert_allclose(schedule.eps, 0.1 * delta * (1 + 0.5 * np.exp(0.2 * k)))


def test_schedule_rejects_negative_parameters():
    with pytest.raises(ConfigError):
        epsilon_schedule(_table(), alpha=-0.1, beta=0.0, gamma=0.0)


def test_sets_hold_exactly_the_near_optimal_models():
    table = _table()
    schedule = epsilon_schedule(table, 0.2, 0.0, 0.0)
    sets = build_sets(table, schedule)
    for k, members in enumerate(sets.members):
        column = table.losses[:, k]
        expected = np.flatnonzero(column <= column.min() + schedule.eps[k])
        np.testing.assert_array_equal(members, expected)
        assert int(np.argmin(column)) in members


def test_sets_grow_with_alpha():
    table = _table()
    small = build_sets(table, epsilon_schedule(table, 0.05, 0.0, 0.0))
    large = build_sets(table, epsilon_schedule(table, 0.4, 0.0, 0.0))
    for a, b in zip(small.members, large.members):
        assert set(a) <= set(b)


def test_infinite_losses_never_enter_a_set():
    table = _table()
    losses = table.losses.copy()
    losses[3, :] = np.inf
    table = HorizonLossTable(losses, table.n_eval)
    sets = build_sets(table, EpsilonSchedule.explicit(np.full(6, 1e9)))
    assert all(3 not in members for members in sets.members)
    assert all(len(members) == 29 for members in sets.members)


def test_all_infinite_column_is_degenerate():
    losses = np.ones((5, 3))
    losses[:, 2] = np.inf
    with pytest.raises(DegenerateColumnError) as info:
        epsilon_schedule(HorizonLossTable(losses, 10), 0.1, 0.0, 0.0)
    assert info.value.k == 3


def test_column_with_a_single_finite_loss_is_degenerate():
    losses = np.ones((5, 3))
    losses[1:, 1] = np.inf
    with pytest.raises(DegenerateColumnError) as info:
        epsilon_schedule(HorizonLossTable(losses, 10), 0.1, 0.0, 0.0)
    assert info.value.k == 2
    losses[2, 1] = 1.5
    assert epsilon_schedule(HorizonLossTable(losses, 10), 0.1, 0.0, 0.0).eps[1] == pytest.approx(0.05)


def test_schedule_length_must_match_table():
    with pytest.raises(ShapeError):
        build_sets(_table(), EpsilonSchedule.explicit([1.0, 2.0]))


def test_calibration_prefers_the_smallest_feasible_alpha():
    table = _table(models=40)
    result = calibrate_schedule(table, band=(1, 40), alpha_grid=(0.4, 0.02, 0.1), beta_grid=(0.0,), gamma_grid=(0.0,))
    assert result.feasible
    assert result.schedule.alpha == 0.02
    assert result.gap_report()["horizons_out_of_band"] == 0


def test_infeasible_band_reports_the_gap():
    table = _table(models=10)
    result = calibrate_schedule(table, band=(50, 60))
    assert not result.feasible
    report = result.gap_report()
    assert report["horizons_out_of_band"] == 6
    assert report["below"] == [1, 2, 3, 4, 5, 6]


def test_default_band_depends_on_pool_size():
    assert default_band(36) == (5, 50)
    assert default_band(1080) == (10, 100)


def test_contraction_rate_of_exponentially_shrinking_sets():
    k = np.arange(1, 21)
    sets = _sets_with_sizes(np.round(200 * np.exp(-0.1 * k)).astype(int), pool_size=200)
    fit = fit_contraction(sets)
    assert fit.beta_lambda_hat == pytest.approx(0.1, abs=0.01)
    assert fit.r2 > 0.99
    assert fit.k_range == list(range(1, 21))


def test_contraction_skips_singletons_and_needs_four_points():
    sets = _sets_with_sizes([8, 4, 2, 1, 1, 1])
    with pytest.raises(InsufficientDataError):
        fit_contraction(sets)


def test_horizon_weights_are_normalized_and_decaying():
    w = horizon_weights(0.5, 0.1, 10)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(np.diff(w) < 0)
    np.testing.assert_allclose(horizon_weights(0.0, 0.1, 4), 0.25)


def test_weighted_ratio_reduces_to_classical_at_zero_exponent():
    sets = _sets_with_sizes([50, 40, 30, 20])
    rho, weights = lyapunov_weighted_ratio(sets, 0.0, 1.0)
    assert rho == pytest.approx(np.mean([0.5, 0.4, 0.3, 0.2]))
    rho_fast, _ = lyapunov_weighted_ratio(sets, 2.0, 1.0)
    assert rho < rho_fast <= 0.5
    with pytest.raises(ConfigError):
        lyapunov_weighted_ratio(sets, float("nan"), 1.0)


def _bank(forecasts, truth=None):
    truth = np.zeros(forecasts.shape[1:]) if truth is None else truth
    return ForecastBank(truth, forecasts, np.arange(forecasts.shape[1]), warmup=20, scale=2.0)


def test_identical_members_have_zero_ambiguity():
    rng = np.random.default_rng(0)
    shared = rng.standard_normal((8, 3, 2))
    bank = _bank(np.stack([shared, shared, shared]))
    sets = RashomonSets([np.array([0, 1, 2])] * 3, np.zeros(3), np.zeros(3), 3)
    report = ambiguity_and_agreement(bank, sets, [1 / 3] * 3)
    np.testing.assert_allclose(report.ambiguity_k, 0.0)
    assert report.ambiguity_eff == 0.0
    np.testing.assert_allclose(report.agreement, 1.0)


def test_ambiguity_is_mean_pairwise_distance_over_scale():
    forecasts = np.zeros((2, 5, 2, 1))
    forecasts[1, :, 0, 0] = 1.0
    forecasts[1, :, 1, 0] = 3.0
    bank = _bank(forecasts)
    sets = RashomonSets([np.array([0, 1]), np.array([0, 1])], np.zeros(2), np.zeros(2), 2)
    report = ambiguity_and_agreement(bank, sets, [0.25, 0.75])
    np.testing.assert_allclose(report.ambiguity_k, [0.5, 1.5])
    assert report.ambiguity_eff == pytest.approx(0.25 * 0.5 + 0.75 * 1.5)


def test_proportional_disagreement_is_fully_correlated_across_horizons():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((12, 1))
    forecasts = np.zeros((2, 12, 4, 1))
    for k in range(4):
        forecasts[1, :, k, :] = (k + 1) * z
    bank = _bank(forecasts)
    sets = RashomonSets([np.array([0, 1])] * 4, np.zeros(4), np.zeros(4), 2)
    report = ambiguity_and_agreement(bank, sets, [0.25] * 4)
    np.testing.assert_allclose(report.agreement, 1.0, atol=1e-9)
    assert report.pairs_used == 1


def test_singleton_sets_are_flagged():
    forecasts = np.random.default_rng(1).standard_normal((3, 6, 2, 1))
    sets = RashomonSets([np.array([0, 1, 2]), np.array([1])], np.zeros(2), np.zeros(2), 3)
    report = ambiguity_and_agreement(_bank(forecasts), sets, [0.5, 0.5])
    assert report.to_dict()["singleton_horizons"] == [2]
    assert report.ambiguity_k[1] == 0.0
    assert report.agreement.shape == (2, 2)


def test_bad_horizon_distribution_is_rejected():
    forecasts = np.zeros((2, 4, 2, 1))
    sets = RashomonSets([np.array([0, 1])] * 2, np.zeros(2), np.zeros(2), 2)
    with pytest.raises(ConfigError):
        ambiguity_and_agreement(_bank(forecasts), sets, [0.7, 0.7])


def test_shifting_a_loss_column_keeps_its_members():
    table = _table()
    schedule = epsilon_schedule(table, 0.1, 0.5, 0.1)
    shifted = HorizonLossTable(table.losses + np.array([0.0, 5.0, 0.0, 0.0, 100.0, 0.0]), table.n_eval)
    original = build_sets(table, schedule).members
    moved = build_sets(shifted, epsilon_schedule(shifted, 0.1, 0.5, 0.1)).members
    for a, b in zip(original, moved):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("case", range(100))
def test_membership_is_exact_and_grows_with_any_tolerance(case):
    rng = np.random.default_rng(1000 + case)
    table = _table(seed=case, models=25)
    losses = table.losses.copy()
    losses[rng.random(losses.shape) < 0.05] = np.inf
    losses[0] = np.minimum(losses[0], 50.0)
    losses[1] = np.minimum(losses[1], 50.0)
    table = HorizonLossTable(losses, table.n_eval)
    base = epsilon_schedule(table, rng.uniform(0.01, 0.5), rng.uniform(0, 2), rng.uniform(0, 0.2))
    grown = EpsilonSchedule.explicit(base.eps * (1.0 + rng.uniform(0.0, 1.0, size=base.eps.shape)))
    small, large = build_sets(table, base), build_sets(table, grown)
    for k in range(table.losses.shape[1]):
        column = table.losses[:, k]
        best = column[np.isfinite(column)].min()
        rescan = [h for h in range(table.pool_size) if np.isfinite(column[h]) and column[h] <= best + base.eps[k]]
        assert small.members[k].tolist() == rescan
        assert set(small.members[k]) <= set(large.members[k])


def test_tolerance_sweep_scales_every_horizon():
    table = _table()
    schedule = epsilon_schedule(table, 0.1, 0.5, 0.1)
    sweep = tolerance_sweep(table, schedule, [0.5, 1.0, 3.0])
    np.testing.assert_allclose(sweep[2].eps, 3.0 * schedule.eps)
    for a, b in zip(sweep[1].members, build_sets(table, schedule).members):
        np.testing.assert_array_equal(a, b)
    assert np.all(sweep[0].sizes <= sweep[1].sizes) and np.all(sweep[1].sizes <= sweep[2].sizes)
    with pytest.raises(ConfigError):
        tolerance_sweep(table, schedule, [1.0, -2.0])
