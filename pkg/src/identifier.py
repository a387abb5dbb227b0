"""
参数辨识模块
基于滤波积分回归量的在线参数估计, 含越界冻结与刷新机制
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.utils import get_logger

logger = get_logger('identifier')


@dataclass
class RefreshAnchor:
    """刷新时刻的积分锚点"""
    t_re: float
    Omega_at_re: np.ndarray
    x_at_re: np.ndarray
    rho_f_at_re: np.ndarray


@dataclass
class IdentifierState:
    """
    辨识器状态

    Attributes:
        Omega: Ω, ω(x) 的积分 (n, p)
        Omega_f: Ω_f, ΩᵀΩ 的积分 (p, p)
        rho_f: ϱ_f, ρ(x)u 的积分 (n,)
        Psi_f: Ψ_f (p,)
        theta_hat: 参数估计 θ̂
        Gamma_theta: 自适应增益矩阵 Γ_θ
        omega_f_bound: ‖Ω_f‖ 上界
        refresh_enabled: 越界时刷新 (否则冻结)
        anchor: 刷新锚点, 未刷新时为 None
    """
    Omega: np.ndarray
    Omega_f: np.ndarray
    rho_f: np.ndarray
    Psi_f: np.ndarray
    theta_hat: np.ndarray
    Gamma_theta: np.ndarray
    omega_f_bound: float
    refresh_enabled: bool = False
    anchor: Optional[RefreshAnchor] = None
    excitation_threshold: float = 0.1
    excitation_time: Optional[float] = None
    frozen: bool = False
    refresh_count: int = 0


def make_identifier(model, theta0, gamma_theta, omega_f_bound, refresh_enabled=False,
                    excitation_threshold=0.1):
    """
    构造零初值辨识器

    Args:
        model: SystemModel
        theta0: 初始估计
        gamma_theta: 标量或 (p, p) 增益
        omega_f_bound: ‖Ω_f‖ 上界
        refresh_enabled: 是否启用刷新
        excitation_threshold: 有限激励监测阈值 a
    """
    n, p = model.n, model.p
    gamma = np.asarray(gamma_theta, dtype=float)
    if gamma.ndim == 0:
        gamma = float(gamma) * np.eye(p)

    return IdentifierState(
        Omega=np.zeros((n, p)),
        Omega_f=np.zeros((p, p)),
        rho_f=np.zeros(n),
        Psi_f=np.zeros(p),
        theta_hat=np.array(theta0, dtype=float),
        Gamma_theta=gamma,
        omega_f_bound=float(omega_f_bound),
        refresh_enabled=bool(refresh_enabled),
        excitation_threshold=float(excitation_threshold),
    )


def _window(state, x, x0):
    """当前积分窗口下的 Ω_re 与位移残差 x - x_ref - ϱ_re"""
    if state.anchor is None:
        return state.Omega, x - x0 - state.rho_f
    a = state.anchor
    return (state.Omega - a.Omega_at_re,
            x - a.x_at_re - (state.rho_f - a.rho_f_at_re))


def refresh(state, t, x, u=None):
    """
    刷新积分: 以当前时刻为新锚点, Ω_f 与 Ψ_f 清零

    Args:
        state: IdentifierState
        t: 当前时刻
        x: 当前状态
        u: 当前控制 (只用于日志)
    """
    state.anchor = RefreshAnchor(
        t_re=float(t),
        Omega_at_re=state.Omega.copy(),
        x_at_re=np.array(x, dtype=float),
        rho_f_at_re=state.rho_f.copy(),
    )
    state.Omega_f = np.zeros_like(state.Omega_f)
    state.Psi_f = np.zeros_like(state.Psi_f)
    state.refresh_count += 1
    logger.info(f"t={t:.3f}s 辨识器刷新 (第 {state.refresh_count} 次)")
    return state


def integrate_filters(state, model, x, u, x0, dt, x_next=None, t=None):
    """
    推进四个滤波积分量一步

    Ω_f 与 Ψ_f 用区间左端值做前向 Euler; Ω 与 ϱ_f 在给出 x_next 时用梯形公式,
    否则前向 Euler. ‖Ω_f‖_F 超过上界时冻结, 启用刷新时改为刷新.

    Args:
        state: IdentifierState
        model: SystemModel
        x: 区间起点状态
        u: 区间内保持的控制
        x0: 初始状态 x(0)
        dt: 步长
        x_next: 区间终点状态 (可选)
        t: 区间起点时刻, 用于刷新锚点

    Returns:
        state: 更新后的状态 (原地修改)
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)

    if np.linalg.norm(state.Omega_f) > state.omega_f_bound:
        if state.refresh_enabled:
            refresh(state, t if t is not None else 0.0, x, u)
        else:
            if not state.frozen:
                logger.info(f"‖Ω_f‖ 达到上界 {state.omega_f_bound}, 滤波积分冻结")
            state.frozen = True
            return state

    Omega_rel, residual = _window(state, x, x0)
    d_Omega_f = Omega_rel.T @ Omega_rel
    d_Psi_f = Omega_rel.T @ residual

    d_Omega = model.omega(x)
    d_rho_f = model.rho(x) @ u
    if x_next is not None:
        d_Omega = 0.5 * (d_Omega + model.omega(x_next))
        d_rho_f = 0.5 * (d_rho_f + model.rho(x_next) @ u)

    state.Omega_f = state.Omega_f + dt * d_Omega_f
    state.Omega_f = 0.5 * (state.Omega_f + state.Omega_f.T)
    state.Psi_f = state.Psi_f + dt * d_Psi_f
    state.Omega = state.Omega + dt * d_Omega
    state.rho_f = state.rho_f + dt * d_rho_f

    return state


def update_theta(state, x, dt):
    """
    参数更新 dθ̂/dt = Γ_θ(Ψ_f - Ω_f θ̂), 线性隐式 Euler 一步:
    θ̂⁺ = (I + dtΓ_θΩ_f)⁻¹(θ̂ + dtΓ_θΨ_f)

    Args:
        state: IdentifierState
        x: 当前状态 (滤波量已积分到同一时刻)
        dt: 步长
    """
    p = state.theta_hat.shape[0]
    A = np.eye(p) + dt * state.Gamma_theta @ state.Omega_f
    b = state.theta_hat + dt * state.Gamma_theta @ state.Psi_f
    state.theta_hat = np.linalg.solve(A, b)
    return state


def excitation_level(state):
    """有限激励水平 λ_min(Ω_fᵀΩ_f)"""
    return float(max(np.linalg.eigvalsh(state.Omega_f.T @ state.Omega_f)[0], 0.0))


def monitor_excitation(state, t):
    """记录激励水平首次超过阈值的时刻"""
    if state.excitation_time is None and excitation_level(state) > state.excitation_threshold:
        state.excitation_time = float(t)
        logger.info(f"t={t:.3f}s 满足有限激励条件 (阈值 {state.excitation_threshold})")
    return state.excitation_time


def identifier_lyapunov(state, theta_true):
    """V_θ = ½θ̃ᵀΓ_θ⁻¹θ̃"""
    err = np.asarray(theta_true, dtype=float) - state.theta_hat
    return float(0.5 * err @ np.linalg.solve(state.Gamma_theta, err))
