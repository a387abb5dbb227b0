import numpy as np
import pandas as pd
import pytest

from src.config import load_config
from src.critic import benchmark_kernels
from src.dynamics import TrajectoryLog
from src.sim import (RunMetrics, Simulator, comparison_configs, compare, cost,
                     multiplier_release_time, run, value_trend_violation)
from src.utils import ConfigError, NumericDomainError


def _log(times, states, controls=None, barrier=None, lam=None):
    log = TrajectoryLog()
    n = len(times)
    controls = controls if controls is not None else [[0.0]] * n
    barrier = barrier if barrier is not None else [1.0] * n
    lam = lam if lam is not None else [0.0] * n
    for k in range(n):
        log.record(times[k], states[k], controls[k], barrier[k], lam[k], np.zeros(3),
                   np.zeros(3), k == 0, 0.0)
    return log


def test_zero_horizon_run(short_config):
    log, metrics = run(short_config(horizon=0.0))
    assert len(log) == 1
    assert metrics.cost == 0.0
    assert metrics.trigger_count == 1
    assert metrics.min_inter_event == np.inf


def test_time_triggered_short_run(short_config):
    config = short_config()
    log, metrics = run(config)
    assert len(log) == 51
    assert metrics.trigger_count == 50
    assert metrics.min_inter_event == pytest.approx(config.dt)
    assert metrics.min_barrier > 0
    assert metrics.cost > 0
    assert isinstance(metrics, RunMetrics)
    np.testing.assert_allclose(np.diff(log.times), config.dt)


def test_run_is_deterministic(short_config):
    a, _ = run(short_config())
    b, _ = run(short_config())
    pd.testing.assert_frame_equal(a.to_frame(), b.to_frame())


def test_baseline_matches_embedded_without_compensation(short_config):
    overrides = {'safety.comp_scale': 0.0}
    u1, _ = run(short_config(variant='u1', **overrides))
    u3, _ = run(short_config(variant='u3', **overrides))
    pd.testing.assert_frame_equal(u1.to_frame(), u3.to_frame())


def test_self_triggered_short_run(short_config):
    config = short_config('selftrig')
    log, metrics = run(config)
    assert 1 <= metrics.trigger_count <= config.n_steps
    assert metrics.min_inter_event >= config.dt or metrics.min_inter_event == np.inf
    assert sum(log.triggered) == metrics.trigger_count
    assert metrics.safety_violation_samples == 0


def test_error_reports_step_index(short_config):
    with pytest.raises(NumericDomainError) as excinfo:
        run(short_config(x0=[40.0, 0.0]))
    assert excinfo.value.step_index == 0


def test_metrics_are_serializable(short_config):
    _, metrics = run(short_config(horizon=0.01))
    data = metrics.to_dict()
    assert isinstance(data['final_weights'], list)
    assert len(data['final_weights']) == 3


@pytest.mark.parametrize('preset', ['obstacle', 'selftrig'])
def test_preset_start_stays_bounded(preset):
    """预设初值远离原点, 核函数值较大, 前 0.3s 状态与权值保持有界"""
    config = load_config(preset, overrides={'horizon': 0.3})
    log, metrics = run(config)
    states = np.vstack(log.states)
    assert len(log) == 301
    assert np.all(np.isfinite(states))
    assert np.max(np.linalg.norm(states, axis=1)) < 5.0
    assert metrics.min_barrier > 0
    assert np.all(np.isfinite(metrics.final_weights))
    assert np.all(np.abs(metrics.final_weights) < 1.0)


def test_period_mode_refines_interval_constants(short_config):
    config = short_config('selftrig', trigger_mode='period')
    sim = Simulator(config)
    log, metrics = sim.run()
    u_seen = float(np.max(np.abs(np.vstack(log.controls))))
    _, l2, l3 = sim.params.l
    rho_sup = l2 / config.trigger.d_v
    assert sim.u_observed == pytest.approx(u_seen)
    assert l3 == pytest.approx(rho_sup * u_seen)
    assert l3 < rho_sup * config.trigger.u_max
    assert metrics.trigger_count >= 1


def test_sim_does_not_reexport_config():
    import src.sim

    assert not hasattr(src.sim, 'load_config')
    assert not hasattr(src.sim, 'ExperimentConfig')


def test_cost_constant_state():
    log = _log([0.0, 1.0, 2.0], [[1.0, 0.0]] * 3)
    assert cost(log, np.eye(2), np.eye(1)) == pytest.approx(2.0)


def test_cost_includes_half_control_weight():
    log = _log([0.0, 1.0], [[0.0, 0.0]] * 2, controls=[[2.0], [2.0]])
    assert cost(log, np.eye(2), np.eye(1)) == pytest.approx(2.0)


def test_cost_of_resting_trajectory():
    log = _log([0.0, 0.5, 1.0], [[0.0, 0.0]] * 3)
    assert cost(log, np.eye(2), np.eye(1)) == 0.0
    with pytest.raises(ValueError):
        cost(TrajectoryLog(), np.eye(2), np.eye(1))


def test_multiplier_release_time():
    times = [0.0, 1.0, 2.0, 3.0, 4.0]
    states = [[0.0, 0.0]] * 5
    log = _log(times, states, barrier=[3.0, 2.0, 1.0, 2.0, 3.0], lam=[0.0, 1.0, 1.0, 0.0, 0.0])
    assert multiplier_release_time(log) == (2.0, 3.0)

    log = _log(times, states, barrier=[3.0, 2.0, 1.0, 2.0, 3.0], lam=[0.0, 0.0, 0.0, 0.0, 0.5])
    assert multiplier_release_time(log) == (2.0, np.inf)

    log = _log(times, states, barrier=[3.0, 2.0, 1.0, 2.0, 3.0])
    assert multiplier_release_time(log) == (2.0, 2.0)


def test_value_trend_violation():
    kernel_config = benchmark_kernels()
    # x = (a, 0) 时第一个核的中心偏移与 x 正交, V̂ = expm1(a²)
    shrinking = [[a, 0.0] for a in np.linspace(1.0, 0.1, 20)]
    log = _log(np.arange(20) * 0.1, shrinking)
    W = np.array([1.0, 0.0, 0.0])
    assert value_trend_violation(log, kernel_config, W, fraction=1.0) < 0
    assert value_trend_violation(log, kernel_config, np.zeros(3), fraction=1.0) == 0.0

    growing = _log(np.arange(20) * 0.1, shrinking[::-1])
    assert value_trend_violation(growing, kernel_config, W, fraction=1.0) > 0


def test_comparison_labels(short_config):
    obstacle = comparison_configs(short_config())
    assert list(obstacle) == ['u1_baseline_cbf', 'u2_rcbf_filter', 'u3_rcbf_embedded']
    assert all(c.mode == 'time_triggered' for c in obstacle.values())

    selftrig = comparison_configs(short_config('selftrig'))
    assert list(selftrig) == ['time_triggered', 'self_triggered', 'self_triggered_baseline_cbf',
                              'self_triggered_no_refresh']
    assert selftrig['self_triggered_no_refresh'].identifier.refresh is False
    assert selftrig['self_triggered'].identifier.refresh is True


def test_compare_rejects_mismatched_grids(short_config):
    with pytest.raises(ConfigError):
        compare({'a': short_config(horizon=0.02), 'b': short_config(horizon=0.03)})
    with pytest.raises(ConfigError):
        compare({})


def test_compare_report(short_config):
    config = short_config('selftrig', horizon=0.03)
    configs = {'time': short_config('selftrig', horizon=0.03, mode='time_triggered'),
               'self_a': config, 'self_b': config}
    results, report = compare(configs)
    assert set(results) == {'time', 'self_a', 'self_b'}
    runs = report['runs']
    assert runs['time']['trigger_count'] == 30
    assert runs['self_a']['trigger_count'] == runs['self_b']['trigger_count']
    assert runs['self_a']['reduction_factor'] == pytest.approx(
        30 / runs['self_a']['trigger_count'])
    assert 'reduction_factor' not in runs['time']
    assert report['dt'] == pytest.approx(0.001)
