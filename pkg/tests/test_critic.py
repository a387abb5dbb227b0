import numpy as np
import pytest

from src.critic import (bellman_error, benchmark_kernels, centers, kernels, make_critic,
                        nominal_control, pe_level, push_replay, safe_control, sample_replay,
                        update, value)
from src.utils import InternalConsistencyError, NumericDomainError


@pytest.fixture
def critic():
    return make_critic(3, 0.1, 10.0, 0.001, 0.001, 0.002, rng_seed=42)


def test_kernels_vanish_at_origin(kernel_config, critic):
    sigma, grad = kernels(kernel_config, np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(sigma, np.zeros(3))
    assert grad.shape == (3, 2)
    assert value(kernel_config, critic, np.zeros(2)) == 0.0


def test_center_offsets_within_radius(kernel_config):
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.uniform(-5, 5, size=2)
        offsets = centers(kernel_config, x) - x
        assert np.all(np.linalg.norm(offsets, axis=1) <= kernel_config.radius)


def test_kernel_gradient_matches_finite_differences(kernel_config):
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(1000):
        x = rng.normal(size=2)
        x *= 5 * rng.random() / max(np.linalg.norm(x), 1e-12)
        _, grad = kernels(kernel_config, x, x)
        fd = np.column_stack([
            (kernels(kernel_config, x + h * e, x)[0] - kernels(kernel_config, x - h * e, x)[0])
            / (2 * h)
            for e in np.eye(2)
        ])
        assert np.linalg.norm(fd - grad) <= 1e-5 * max(np.linalg.norm(grad), 1.0)


def test_kernel_exponent_limit(kernel_config):
    x = np.array([10.0, 10.0])
    with pytest.raises(NumericDomainError):
        kernels(kernel_config, x, x)


def test_nominal_control_formula(model, kernel_config, critic, R):
    x = np.array([0.4, -0.7])
    _, grad = kernels(kernel_config, x, x)
    expected = -(model.rho(x).T @ grad.T @ critic.W_hat)
    np.testing.assert_allclose(nominal_control(model, kernel_config, critic, x, R), expected)


def test_nominal_control_zero_without_input_authority(model, kernel_config, critic, R):
    u = nominal_control(model, kernel_config, critic, np.array([0.7, 0.0]), R)
    np.testing.assert_array_equal(u, [0.0])


def test_safe_control_equals_nominal_when_inactive(model, obstacle_spec, kernel_config,
                                                   critic, R):
    x = np.array([0.3, -0.4])
    u, lam = safe_control(model, obstacle_spec, kernel_config, critic, x, model.theta_true, R)
    assert lam == 0.0
    np.testing.assert_array_equal(u, nominal_control(model, kernel_config, critic, x, R))


def test_bellman_error_at_origin(model, obstacle_spec, kernel_config, critic, Q, R):
    delta = bellman_error(model, obstacle_spec, kernel_config, critic, np.zeros(2),
                          model.theta_true, [0.0], Q, R)
    assert delta == 0.0


def test_zero_error_update_only_scales_gain(model, obstacle_spec, kernel_config, critic, Q, R):
    W0 = critic.W_hat.copy()
    update(critic, model, obstacle_spec, kernel_config, np.zeros(2), model.theta_true, [0.0],
           Q, R, 1e-3)
    np.testing.assert_array_equal(critic.W_hat, W0)
    np.testing.assert_allclose(critic.Gamma, 10.0 * (1 + 0.002e-3) * np.eye(3), rtol=1e-12)
    assert critic.clamp_events == 0


def test_update_reduces_bellman_error(model, obstacle_spec, kernel_config, Q, R):
    critic = make_critic(3, 0.1, 10.0, 0.5, 0.0, 0.0, n_replay=0)
    x = np.array([0.5, -0.3])
    args = (model, obstacle_spec, kernel_config)
    before = bellman_error(*args, critic, x, model.theta_true, [0.2], Q, R)
    update(critic, *args, x, model.theta_true, [0.2], Q, R, 1e-2)
    after = bellman_error(*args, critic, x, model.theta_true, [0.2], Q, R)
    assert abs(after) < abs(before)


def test_gain_is_clamped(model, obstacle_spec, kernel_config, Q, R):
    critic = make_critic(3, 0.1, 10.0, 0.001, 0.001, 1.0, gamma_bounds=(1e-3, 10.0), n_replay=0)
    update(critic, model, obstacle_spec, kernel_config, np.zeros(2), model.theta_true, [0.0],
           Q, R, 1e-2)
    eigvals = np.linalg.eigvalsh(critic.Gamma)
    assert eigvals.max() <= 10.0 + 1e-12
    assert critic.clamp_events == 1
    np.testing.assert_array_equal(critic.Gamma, critic.Gamma.T)


def test_non_finite_gain_raises(model, obstacle_spec, kernel_config, critic, Q, R):
    critic.Gamma = np.full((3, 3), np.nan)
    with pytest.raises(InternalConsistencyError):
        update(critic, model, obstacle_spec, kernel_config, np.array([0.2, 0.1]),
               model.theta_true, [0.0], Q, R, 1e-3)


def test_pe_level_scalar():
    critic = make_critic(1, 0.0, 1.0, 1.0, 0.0, 0.0, n_replay=0)
    assert pe_level(critic, np.array([1.0]), 1.0) == pytest.approx(1.0)


def test_pe_level_with_replay_terms():
    critic = make_critic(2, 0.0, 1.0, 1.0, 2.0, 0.0, n_replay=2)
    terms = [(np.array([0.0, 1.0]), 1.0), (np.array([0.0, 1.0]), 1.0)]
    # k_c1·e1e1ᵀ + (2/2)·2·e2e2ᵀ
    assert pe_level(critic, np.array([1.0, 0.0]), 1.0, terms) == pytest.approx(1.0)


def test_replay_sampling_is_seeded():
    a = make_critic(3, 0.1, 10.0, 0.001, 0.001, 0.002, rng_seed=5)
    b = make_critic(3, 0.1, 10.0, 0.001, 0.001, 0.002, rng_seed=5)
    for k in range(10):
        push_replay(a, [k, -k])
        push_replay(b, [k, -k])
    for _ in range(5):
        sa, sb = sample_replay(a), sample_replay(b)
        assert len(sa) == 3
        for xa, xb in zip(sa, sb):
            np.testing.assert_array_equal(xa, xb)


def test_replay_capacity_and_empty_buffer():
    critic = make_critic(3, 0.1, 10.0, 0.001, 0.001, 0.002, replay_capacity=4)
    assert sample_replay(critic) == []
    for k in range(10):
        push_replay(critic, [k, 0.0])
    assert len(critic.replay) == 4
    np.testing.assert_array_equal(critic.replay[0], [6.0, 0.0])


def test_capacity_below_replay_count_rejected():
    with pytest.raises(ValueError):
        make_critic(3, 0.1, 10.0, 0.001, 0.001, 0.002, n_replay=5, replay_capacity=2)


def test_benchmark_kernel_radius():
    config = benchmark_kernels()
    assert config.L == 3
    assert config.radius == pytest.approx(0.7 * np.hypot(0.85, 0.6))


def test_single_state_buffer():
    critic = make_critic(3, 0.1, 10.0, 0.001, 0.001, 0.002, rng_seed=1)
    push_replay(critic, [0.5, -0.5])
    for x in sample_replay(critic):
        np.testing.assert_array_equal(x, [0.5, -0.5])


def test_replay_draws_are_uniform():
    critic = make_critic(1, 0.1, 10.0, 0.001, 0.001, 0.002, n_replay=1, rng_seed=3)
    for k in range(10):
        push_replay(critic, [float(k), 0.0])
    counts = np.zeros(10)
    for _ in range(10000):
        counts[int(sample_replay(critic)[0][0])] += 1
    # 二项分布 n=1e4, p=0.1 的 4σ
    assert np.all(np.abs(counts - 1000) <= 4 * np.sqrt(10000 * 0.1 * 0.9))


@pytest.mark.parametrize('norm_power', [1, 2])
def test_weight_increment_normalization(model, obstacle_spec, kernel_config, Q, R, norm_power):
    x = np.array([0.5, -0.3])
    u = np.array([0.2])
    theta = model.theta_true
    _, grad = kernels(kernel_config, x, x)
    xi = grad @ (model.omega(x) @ theta + model.rho(x) @ u)
    iota = np.sqrt(1.0 + xi @ xi)

    critic = make_critic(3, 0.1, 10.0, 0.5, 0.0, 0.0, n_replay=0, norm_power=norm_power)
    delta = bellman_error(model, obstacle_spec, kernel_config, critic, x, theta, u, Q, R)
    update(critic, model, obstacle_spec, kernel_config, x, theta, u, Q, R, 1e-2)
    expected = 0.1 - 1e-2 * 0.5 * 10.0 * xi * delta / iota ** norm_power
    np.testing.assert_allclose(critic.W_hat, expected, rtol=1e-10)


@pytest.mark.parametrize('norm_power, max_change', [(1, None), (2, 1e-3)])
def test_weight_step_at_far_initial_state(model, obstacle_spec, kernel_config, Q, R,
                                          norm_power, max_change):
    """x0 = (-2, -3) 处核指数约 15, ξ/ι 的权值律一步即使权值变号"""
    critic = make_critic(3, 0.1, 10.0, 0.001, 0.001, 0.002, n_replay=0, norm_power=norm_power)
    x0 = np.array([-2.0, -3.0])
    theta0 = np.zeros(3)
    u, _ = safe_control(model, obstacle_spec, kernel_config, critic, x0, theta0, R)
    update(critic, model, obstacle_spec, kernel_config, x0, theta0, u, Q, R, 1e-3)

    change = np.max(np.abs(critic.W_hat - 0.1))
    if max_change is None:
        assert change > 1.0
    else:
        assert change < max_change
        assert np.all(critic.W_hat > 0)


def test_invalid_norm_power_rejected():
    with pytest.raises(ValueError):
        make_critic(3, 0.1, 10.0, 0.001, 0.001, 0.002, norm_power=3)
