"""
被控对象模块
定义不确定仿射控制系统、基准系统和定步长 RK4 积分
"""

from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np
import pandas as pd

from src.utils import DivergenceError, NumericDomainError

# 状态范数超过该值视为发散
DIVERGENCE_BOUND = 1e6

# RK4 子步长 h 满足 h·‖∂f/∂x‖ <= STIFFNESS_STEP
STIFFNESS_STEP = 1.0
MAX_SUBSTEPS = 100000


@dataclass(frozen=True)
class SystemModel:
    """
    不确定仿射控制系统 dx/dt = ω(x)θ + ρ(x)u

    Attributes:
        n: 状态维数
        m: 输入维数
        p: 参数维数
        regressor: x -> ω(x), 形状 (n, p)
        input_map: x -> ρ(x), 形状 (n, m)
        theta_true: 真实参数 θ
        name: 系统名称
    """
    n: int
    m: int
    p: int
    regressor: Callable
    input_map: Callable
    theta_true: np.ndarray
    name: str = 'custom'

    def omega(self, x):
        """回归矩阵 ω(x), 检查形状与有限性"""
        W = np.asarray(self.regressor(x), dtype=float)
        if W.shape != (self.n, self.p):
            raise NumericDomainError(f"回归矩阵形状错误: {W.shape}, 期望 {(self.n, self.p)}")
        if not np.all(np.isfinite(W)):
            raise NumericDomainError(f"回归矩阵含非有限值, x={x}")
        return W

    def rho(self, x):
        """输入矩阵 ρ(x)"""
        G = np.asarray(self.input_map(x), dtype=float)
        if G.shape != (self.n, self.m):
            raise NumericDomainError(f"输入矩阵形状错误: {G.shape}, 期望 {(self.n, self.m)}")
        if not np.all(np.isfinite(G)):
            raise NumericDomainError(f"输入矩阵含非有限值, x={x}")
        return G


def drift(model, x, theta):
    """
    漂移项 ζ(x,θ) = ω(x)θ, 关于 θ 线性

    Args:
        model: SystemModel
        x: 状态向量 (n,)
        theta: 参数向量 (p,)

    Returns:
        ζ(x,θ), 形状 (n,)
    """
    return model.omega(x) @ np.asarray(theta, dtype=float)


def vector_field(model, x, u, theta):
    """闭环右端项 ω(x)θ + ρ(x)u"""
    return drift(model, x, theta) + model.rho(x) @ np.asarray(u, dtype=float)


def _benchmark_regressor(x):
    return np.array([[x[0], x[1], 0.0],
                     [0.0, 0.0, x[0] ** 3]])


def _benchmark_input_map(x):
    return np.array([[0.0],
                     [x[1]]])


def benchmark_system():
    """
    基准二维非线性系统
    ω(x) = [[x1, x2, 0], [0, 0, x1³]], ρ(x) = [0, x2]ᵀ, θ = (-0.6, -1, 1)

    Returns:
        model: SystemModel (n=2, m=1, p=3)
    """
    return SystemModel(
        n=2, m=1, p=3,
        regressor=_benchmark_regressor,
        input_map=_benchmark_input_map,
        theta_true=np.array([-0.6, -1.0, 1.0]),
        name='benchmark',
    )


def jacobian_norm(model, x, u_held, theta):
    """保持控制下 ∂f/∂x 的谱范数, 中心差分估计"""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    J = np.empty((n, n))
    for i in range(n):
        h = 1e-6 * max(1.0, abs(x[i]))
        e = np.zeros(n)
        e[i] = h
        J[:, i] = (vector_field(model, x + e, u_held, theta)
                   - vector_field(model, x - e, u_held, theta)) / (2.0 * h)
    return float(np.linalg.norm(J, 2))


def substep_count(model, x, u_held, theta, dt):
    """
    一个网格步内的 RK4 子步数 m = ceil(dt·‖∂f/∂x‖ / STIFFNESS_STEP)

    保持的控制很大时 ρ(x)u 使系统变刚性, 单个 RK4 步落在稳定域之外
    """
    m = int(np.ceil(dt * jacobian_norm(model, x, u_held, theta) / STIFFNESS_STEP))
    return max(m, 1)


def _rk4(model, x, u_held, theta, h):
    k1 = vector_field(model, x, u_held, theta)
    k2 = vector_field(model, x + 0.5 * h * k1, u_held, theta)
    k3 = vector_field(model, x + 0.5 * h * k2, u_held, theta)
    k4 = vector_field(model, x + h * k3, u_held, theta)
    return x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def step_rk4(model, x, u_held, theta, dt, step_index=None):
    """
    经典四阶 Runge-Kutta 推进一个网格步, 控制量在步内零阶保持

    步内刚性较强时均分为 m 个 RK4 子步 (见 substep_count), 非刚性时 m = 1

    Args:
        model: SystemModel
        x: 当前状态
        u_held: 保持的控制量
        theta: 积分所用参数 (仿真中为真实参数)
        dt: 步长
        step_index: 当前步数, 用于发散诊断

    Returns:
        x_next: 下一步状态
    """
    if dt <= 0:
        raise ValueError(f"步长必须为正: {dt}")

    x = np.asarray(x, dtype=float)
    u_held = np.asarray(u_held, dtype=float)

    m = substep_count(model, x, u_held, theta, dt)
    if m > MAX_SUBSTEPS:
        raise DivergenceError(f"保持控制过大, 需要 {m} 个 RK4 子步 (u={u_held})",
                              step_index=step_index)
    h = dt / m
    x_next = x
    for _ in range(m):
        x_next = _rk4(model, x_next, u_held, theta, h)

    if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > DIVERGENCE_BOUND:
        raise DivergenceError(f"状态发散: |x|={np.linalg.norm(x_next):.3e}", step_index=step_index)

    return x_next


@dataclass
class TrajectoryLog:
    """仿真轨迹记录, 所有序列共用同一时间网格"""
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    controls: List[np.ndarray] = field(default_factory=list)
    barrier_values: List[float] = field(default_factory=list)
    multiplier_values: List[float] = field(default_factory=list)
    theta_estimates: List[np.ndarray] = field(default_factory=list)
    critic_weights: List[np.ndarray] = field(default_factory=list)
    triggered: List[bool] = field(default_factory=list)
    trigger_instants: List[float] = field(default_factory=list)
    # 用真实参数计算的约束裕度, 仅作诊断
    true_margins: List[float] = field(default_factory=list)

    def record(self, t, x, u, s, lam, theta_hat, weights, triggered, true_margin):
        """追加一行记录"""
        self.times.append(float(t))
        self.states.append(np.array(x, dtype=float))
        self.controls.append(np.array(u, dtype=float))
        self.barrier_values.append(float(s))
        self.multiplier_values.append(float(lam))
        self.theta_estimates.append(np.array(theta_hat, dtype=float))
        self.critic_weights.append(np.array(weights, dtype=float))
        self.triggered.append(bool(triggered))
        self.true_margins.append(float(true_margin))
        if triggered:
            self.trigger_instants.append(float(t))

    def __len__(self):
        return len(self.times)

    def to_frame(self):
        """
        转换为 DataFrame

        Returns:
            df: 列为 t, x1..xn, u1..um, s, lambda, theta1..thetap, W1..WL, triggered
        """
        if not self.times:
            raise ValueError("轨迹为空")

        columns = {'t': self.times}
        states = np.vstack(self.states)
        controls = np.vstack(self.controls)
        thetas = np.vstack(self.theta_estimates)
        weights = np.vstack(self.critic_weights)

        for i in range(states.shape[1]):
            columns[f'x{i + 1}'] = states[:, i]
        for i in range(controls.shape[1]):
            columns[f'u{i + 1}'] = controls[:, i]
        columns['s'] = self.barrier_values
        columns['lambda'] = self.multiplier_values
        for i in range(thetas.shape[1]):
            columns[f'theta{i + 1}'] = thetas[:, i]
        for i in range(weights.shape[1]):
            columns[f'W{i + 1}'] = weights[:, i]
        columns['triggered'] = np.array(self.triggered, dtype=int)

        return pd.DataFrame(columns)
