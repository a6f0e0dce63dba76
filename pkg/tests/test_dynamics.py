import numpy as np
import pytest

from dynamics import (
    KSIntegrator,
    LogisticSpec,
    Lorenz96Integrator,
    Lorenz96Spec,
    SplitSpec,
    Trajectory,
    load_csv,
    parse_system_spec,
    simulate,
    simulate_ks,
    simulate_logistic,
    simulate_lorenz96,
    split_standardize,
    write_csv,
)
from errors import ConfigError, ParseError, ShapeError


def test_lorenz96_tendency_matches_equation():
    integrator = Lorenz96Integrator(forcing=8.0, dt=0.01)
    x = np.arange(1.0, 7.0)
    expected = np.array([
        (x[(i + 1) % 6] - x[(i - 2) % 6]) * x[(i - 1) % 6] - x[i] + 8.0 for i in range(6)
    ])
    np.testing.assert_allclose(integrator.tendency(x), expected, rtol=0, atol=1e-12)


def test_lorenz96_uniform_state_is_a_fixed_point():
    traj = simulate_lorenz96(d=8, forcing=6.0, steps=20, transient=0, initial_state=np.full(8, 6.0))
    np.testing.assert_array_equal(traj.data, np.full((20, 8), 6.0))


def test_lorenz96_rejects_unstable_dt():
    with pytest.raises(ConfigError):
        simulate_lorenz96(d=8, dt=0.1, steps=10)


def test_lorenz96_is_seed_deterministic():
    a = simulate_lorenz96(d=8, steps=50, seed=7, transient=100)
    b = simulate_lorenz96(d=8, steps=50, seed=7, transient=100)
    c = simulate_lorenz96(d=8, steps=50, seed=8, transient=100)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_lorenz96_stride_subsamples_the_fine_run():
    fine = simulate_lorenz96(d=8, steps=9, seed=3, transient=50, stride=1)
    coarse = simulate_lorenz96(d=8, steps=5, seed=3, transient=50, stride=2)
    np.testing.assert_array_equal(coarse.data, fine.data[::2])
    assert coarse.dt == pytest.approx(2 * fine.dt)


def test_ks_preserves_the_spatial_mean():
    n = 32
    grid = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    u0 = 0.3 + 0.1 * np.cos(grid) + 0.05 * np.sin(3 * grid)
    traj = simulate_ks(n=n, length=22.0, dt=0.25, steps=40, transient=0, initial_state=u0)
    np.testing.assert_allclose(traj.data.mean(axis=1), 0.3, atol=1e-10)


def test_ks_integrator_keeps_real_fields():
    integrator = KSIntegrator(16, 22.0, 0.25)
    u = np.random.default_rng(0).standard_normal(16) * 0.1
    assert integrator.step(u).shape == (16,)
    assert np.all(np.isfinite(integrator.step(u)))


def test_logistic_stays_in_unit_interval():
    traj = simulate_logistic(r=4.0, steps=5000, seed=2)
    assert traj.dt == 1.0
    assert traj.d == 1
    assert traj.data.min() >= 0.0 and traj.data.max() <= 1.0


def test_simulate_dispatches_on_spec():
    traj = simulate(LogisticSpec(3.9), steps=30, seed=1)
    assert traj.source == "logistic"
    traj = simulate(Lorenz96Spec(d=6, forcing=8.0), steps=10, seed=1, transient=20)
    assert traj.source == "lorenz96" and traj.d == 6


def test_parse_system_spec_rejects_unknown_kind_and_parameters():
    with pytest.raises(ConfigError):
        parse_system_spec({"kind": "henon"})
    with pytest.raises(ConfigError):
        parse_system_spec({"kind": "lorenz96", "sigma": 10})
    assert parse_system_spec({"kind": "lorenz96", "d": 12, "forcing": 5.0}).forcing == 5.0


def test_trajectory_is_read_only_and_finite():
    traj = Trajectory(np.arange(6.0).reshape(3, 2), 0.5)
    with pytest.raises(ValueError):
        traj.data[0, 0] = 1.0
    with pytest.raises(ShapeError):
        Trajectory(np.array([[1.0], [np.nan]]), 1.0)
    with pytest.raises(ConfigError):
        Trajectory(np.zeros((3, 1)), 0.0)


def test_load_csv_skips_a_text_header(tmp_path):
    path = tmp_path / "series.csv"
    path.write_text("a,b\n1,2\n3,4.5\n", encoding="utf-8")
    traj = load_csv(str(path), dt=0.1)
    np.testing.assert_array_equal(traj.data, [[1.0, 2.0], [3.0, 4.5]])
    assert traj.source == "external"


def test_load_csv_reports_empty_cell_position(tmp_path):
    path = tmp_path / "series.csv"
    path.write_text("1,2\n3,\n5,6\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_csv(str(path), dt=1.0)
    assert (info.value.row, info.value.column) == (2, 2)


def test_load_csv_reports_non_numeric_cell(tmp_path):
    path = tmp_path / "series.csv"
    path.write_text("x,y\n1,2\n3,abc\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_csv(str(path), dt=1.0)
    assert (info.value.row, info.value.column) == (3, 2)


def test_load_csv_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ParseError):
        load_csv(str(path), dt=1.0)


def test_written_csv_reloads_bit_for_bit(tmp_path):
    traj = simulate_lorenz96(d=5, steps=30, seed=4, transient=10)
    path = tmp_path / "trajectory.csv"
    write_csv(traj, str(path))
    assert path.read_text(encoding="utf-8").splitlines()[0] == "x0,x1,x2,x3,x4"
    np.testing.assert_array_equal(load_csv(str(path), traj.dt).data, traj.data)


def test_split_fractions_are_validated():
    with pytest.raises(ConfigError):
        SplitSpec(train_frac=0.0, val_frac=0.5, test_frac=0.5)
    with pytest.raises(ConfigError):
        SplitSpec(train_frac=0.6, val_frac=0.3, test_frac=0.3)


def test_split_standardize_uses_train_moments():
    rng = np.random.default_rng(0)
    data = np.column_stack([rng.normal(3.0, 2.0, 100), np.full(100, 7.0)])
    split = split_standardize(Trajectory(data, 1.0), SplitSpec(0.6, 0.2, 0.2))
    assert (split.train.T, split.val.T, split.test.T) == (60, 20, 20)
    np.testing.assert_allclose(split.train.data.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(split.train.data[:, 0].std(), 1.0, rtol=1e-12)
    assert split.std[1] == 1.0
    np.testing.assert_allclose(split.invert(split.val.data), data[60:80], atol=1e-12)


def test_split_standardize_needs_two_rows_per_segment():
    with pytest.raises(ShapeError):
        split_standardize(Trajectory(np.arange(5.0), 1.0), SplitSpec(0.6, 0.2, 0.2))


def test_standardizing_standardized_data_is_idempotent():
    rng = np.random.default_rng(5)
    traj = Trajectory(rng.normal(2.0, 3.0, size=(200, 3)), 1.0)
    first = split_standardize(traj, SplitSpec(0.6, 0.2, 0.2))
    whole = Trajectory(np.vstack([first.train.data, first.val.data, first.test.data]), 1.0)
    repeat = split_standardize(whole, SplitSpec(0.6, 0.2, 0.2))
    np.testing.assert_allclose(repeat.mean, 0.0, atol=1e-12)
    np.testing.assert_allclose(repeat.std, 1.0, atol=1e-12)


def test_ks_mean_is_conserved_over_a_long_run():
    u0 = 0.1 * np.random.default_rng(6).standard_normal(64)
    traj = simulate_ks(n=64, steps=5000, transient=0, initial_state=u0)
    np.testing.assert_allclose(traj.data.mean(axis=1), u0.mean(), rtol=0, atol=1e-6)


def test_ks_twin_runs_separate():
    start = simulate_ks(steps=2, seed=2).data[-1]
    nudged = start.copy()
    nudged[10] += 1e-8
    a = simulate_ks(steps=2000, transient=0, initial_state=start)
    b = simulate_ks(steps=2000, transient=0, initial_state=nudged)
    assert np.linalg.norm(a.data[-1] - b.data[-1]) > 1e-2


def test_lorenz96_twin_runs_separate_within_ten_time_units():
    start = simulate_lorenz96(d=40, forcing=10.0, steps=2, seed=4).data[-1]
    nudged = start.copy()
    nudged[0] += 1e-8
    a = simulate_lorenz96(d=40, forcing=10.0, steps=1001, transient=0, initial_state=start)
    b = simulate_lorenz96(d=40, forcing=10.0, steps=1001, transient=0, initial_state=nudged)
    distance = np.linalg.norm(a.data - b.data, axis=1)
    assert distance[-1] > 10.0 * distance[0]


@pytest.mark.slow
def test_lorenz96_climatological_spread():
    traj = simulate_lorenz96(d=40, forcing=8.0, dt=0.01, steps=100000, seed=0)
    assert traj.data.std(axis=0).mean() == pytest.approx(3.6, abs=0.5)
