import numpy as np
import pytest

from src.config import load_config
from src.critic import benchmark_kernels
from src.dynamics import SystemModel, benchmark_system
from src.safety import SafetySpec, half_plane_barrier, obstacle_barrier

# 快速闭环测试使用的小初值, 位于两个预设的安全集内
SMALL_X0 = [0.3, -0.4]


@pytest.fixture
def model():
    return benchmark_system()


@pytest.fixture
def linear_model():
    """一维测试系统 dx/dt = θx, θ = 1"""
    return SystemModel(
        n=1, m=1, p=1,
        regressor=lambda x: np.array([[x[0]]]),
        input_map=lambda x: np.array([[0.0]]),
        theta_true=np.array([1.0]),
        name='linear',
    )


@pytest.fixture
def obstacle_spec():
    barrier, grad = obstacle_barrier()
    return SafetySpec(barrier, grad, alpha_gain=8.0, comp_scale=0.2, name='obstacle')


@pytest.fixture
def selftrig_spec():
    barrier, grad = half_plane_barrier()
    return SafetySpec(barrier, grad, alpha_gain=6.0, comp_scale=1 / 1.2, relax=0.8,
                      name='half_plane')


@pytest.fixture
def kernel_config():
    return benchmark_kernels()


@pytest.fixture
def R():
    return np.eye(1)


@pytest.fixture
def Q():
    return np.eye(2)


@pytest.fixture
def short_config():
    """短时域配置工厂"""
    def factory(preset='obstacle', horizon=0.05, **overrides):
        overrides.setdefault('x0', SMALL_X0)
        overrides['horizon'] = horizon
        return load_config(preset, overrides=overrides)
    return factory
