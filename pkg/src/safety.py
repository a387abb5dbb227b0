"""
安全约束模块
障碍函数、鲁棒补偿项、约束裕度 ν/ν_d、拉格朗日乘子闭式解与鲁棒增益设计
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import linalg

from src.utils import InfeasibleConstraintError, ParameterDomainError


@dataclass(frozen=True)
class SafetySpec:
    """
    安全集描述 D = {x : s(x) >= 0}

    Attributes:
        barrier: s(x)
        barrier_grad: ∇s(x), 形状 (n,)
        alpha_gain: 线性 K∞ 函数增益, α(s) = alpha_gain * s
        comp_scale: 补偿项系数 ϖ, Ξ(x) = ϖ‖L_ω s‖²
        relax: 自触发松弛因子 γ, 取 1 时退化为时间触发约束
        name: 安全集名称
    """
    barrier: Callable
    barrier_grad: Callable
    alpha_gain: float
    comp_scale: float = 0.0
    relax: float = 1.0
    name: str = 'custom'

    def __post_init__(self):
        if self.alpha_gain <= 0:
            raise ParameterDomainError(f"alpha_gain 必须为正: {self.alpha_gain}")
        if self.comp_scale < 0:
            raise ParameterDomainError(f"comp_scale 不能为负: {self.comp_scale}")
        if not 0.0 < self.relax <= 1.0:
            raise ParameterDomainError(f"relax 必须在 (0, 1] 内: {self.relax}")

    def alpha(self, s):
        """K∞ 函数 α(s)"""
        return self.alpha_gain * s


@dataclass(frozen=True)
class RobustGainInputs:
    """鲁棒增益设计常数 (辨识器 Lyapunov 界 k1, k3 与设计参数 η > η_c > 0)"""
    k1: float
    k3: float
    eta: float
    eta_c: float


def obstacle_barrier(center=(-0.5, -1.5), radius=1.0):
    """
    圆形障碍物 s(x) = ‖x - c‖² - r²

    Returns:
        (barrier, barrier_grad)
    """
    c = np.asarray(center, dtype=float)
    r2 = float(radius) ** 2

    def barrier(x):
        d = np.asarray(x, dtype=float) - c
        return float(d @ d - r2)

    def barrier_grad(x):
        return 2.0 * (np.asarray(x, dtype=float) - c)

    return barrier, barrier_grad


def half_plane_barrier():
    """
    抛物线边界安全集 s(x) = -x2² - x1 + 1

    Returns:
        (barrier, barrier_grad)
    """
    def barrier(x):
        return float(-x[1] ** 2 - x[0] + 1.0)

    def barrier_grad(x):
        return np.array([-1.0, -2.0 * x[1]])

    return barrier, barrier_grad


@lru_cache(maxsize=32)
def _cached_inverse(data, shape):
    R = np.frombuffer(data, dtype=float).reshape(shape)
    try:
        factor = linalg.cho_factor(R)
    except linalg.LinAlgError as e:
        raise ParameterDomainError(f"R 不是正定矩阵: {e}")
    R_inv = linalg.cho_solve(factor, np.eye(shape[0]))
    R_inv = 0.5 * (R_inv + R_inv.T)
    R_inv.setflags(write=False)
    return R_inv


def spd_inverse(R):
    """
    对称正定矩阵求逆 (Cholesky 分解, 按矩阵内容缓存)

    Args:
        R: 对称正定矩阵

    Returns:
        R_inv: 只读逆矩阵
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    return _cached_inverse(np.ascontiguousarray(R).tobytes(), R.shape)


def lie_derivatives(model, spec, x):
    """
    李导数 L_ω s = ∇s·ω(x), L_ρ s = ∇s·ρ(x)

    Returns:
        (L_omega_s (p,), L_rho_s (m,))
    """
    grad = np.asarray(spec.barrier_grad(x), dtype=float)
    return grad @ model.omega(x), grad @ model.rho(x)


def compensation(model, spec, x):
    """鲁棒补偿项 Ξ(x) = ϖ‖L_ω s(x)‖²"""
    if spec.comp_scale == 0.0:
        return 0.0
    L_omega, _ = lie_derivatives(model, spec, x)
    return float(spec.comp_scale * (L_omega @ L_omega))


def _margin(model, spec, x, theta_hat, u, relax):
    L_omega, L_rho = lie_derivatives(model, spec, x)
    xi = spec.comp_scale * float(L_omega @ L_omega)
    return float(L_omega @ np.asarray(theta_hat, dtype=float)
                 + L_rho @ np.asarray(u, dtype=float)
                 + relax * spec.alpha(spec.barrier(x)) - xi)


def nu(model, spec, x, theta_hat, u):
    """
    RCBF 约束裕度 ν = L_ω s·θ̂ + L_ρ s·u + α(s) - Ξ(x), ν >= 0 表示约束满足
    """
    return _margin(model, spec, x, theta_hat, u, 1.0)


def nu_d(model, spec, x_sample, theta_hat, u):
    """自触发约束裕度, α 项乘以松弛因子 γ; γ = 1 时与 nu 相同"""
    return _margin(model, spec, x_sample, theta_hat, u, spec.relax)


def degeneracy_threshold(model, spec, x, R):
    """R_sρ 的退化阈值 1e-9·(1 + ‖∇s‖²‖ρ‖²‖R⁻¹‖)"""
    grad = np.asarray(spec.barrier_grad(x), dtype=float)
    rho_norm = np.linalg.norm(model.rho(x), 2)
    return 1e-9 * (1.0 + (grad @ grad) * rho_norm ** 2 * np.linalg.norm(spd_inverse(R), 2))


def lagrange_multiplier(model, spec, x, theta_hat, u_no, R, self_triggered=False):
    """
    拉格朗日乘子闭式解 λ = max(-ν(u_no) / R_sρ, 0), R_sρ = L_ρ s R⁻¹ L_ρ sᵀ

    Args:
        model: SystemModel
        spec: SafetySpec
        x: 状态 (自触发时为采样状态)
        theta_hat: 参数估计
        u_no: 名义控制
        R: 输入权重矩阵
        self_triggered: 是否使用自触发约束 ν_d

    Returns:
        lam: 乘子 (>= 0)
    """
    margin_fn = nu_d if self_triggered else nu
    margin = margin_fn(model, spec, x, theta_hat, u_no)
    if margin >= 0.0:
        return 0.0

    _, L_rho = lie_derivatives(model, spec, x)
    R_srho = float(L_rho @ spd_inverse(R) @ L_rho)
    if R_srho <= degeneracy_threshold(model, spec, x, R):
        raise InfeasibleConstraintError(
            f"约束在 x={np.round(x, 6).tolist()} 处不可执行: 裕度 {margin:.3e}, R_sρ={R_srho:.3e}")

    return -margin / R_srho


def corrected_control(model, spec, x, u_no, lam, R):
    """安全修正后的控制 u = u_no + λR⁻¹L_ρ sᵀ"""
    if lam == 0.0:
        return np.array(u_no, dtype=float)
    _, L_rho = lie_derivatives(model, spec, x)
    return np.asarray(u_no, dtype=float) + lam * (spd_inverse(R) @ L_rho)


def robust_gains(inputs):
    """
    鲁棒补偿增益设计: ϖ = 1/(4(η-η_c)k1k3), α_s = η_c k3/η

    Args:
        inputs: RobustGainInputs

    Returns:
        (comp_scale, alpha_gain)
    """
    if inputs.k1 <= 0 or inputs.k3 <= 0:
        raise ParameterDomainError(f"k1, k3 必须为正: k1={inputs.k1}, k3={inputs.k3}")
    if not inputs.eta > inputs.eta_c > 0:
        raise ParameterDomainError(f"需要 η > η_c > 0: η={inputs.eta}, η_c={inputs.eta_c}")

    comp_scale = 1.0 / (4.0 * (inputs.eta - inputs.eta_c) * inputs.k1 * inputs.k3)
    alpha_gain = inputs.eta_c * inputs.k3 / inputs.eta
    return comp_scale, alpha_gain


def robust_barrier(s, v_theta, eta):
    """收紧的障碍函数 s_θ = s - ηV_θ"""
    return np.asarray(s, dtype=float) - eta * np.asarray(v_theta, dtype=float)


def robust_barrier_rate_margin(times, s_values, v_theta, inputs):
    """
    检查 ds_θ/dt >= -(η_c k3/η)s_θ 的差分余量

    差商 (s_θ[k+1]-s_θ[k])/dt 与右端在区间两端的平均值比较, 返回每个区间的余量,
    余量 >= -tol 即满足不等式

    Args:
        times: 时间序列
        s_values: s(x(t)) 序列
        v_theta: V_θ(t) 序列
        inputs: RobustGainInputs

    Returns:
        margins: 长度为 len(times)-1 的数组
    """
    t = np.asarray(times, dtype=float)
    s_theta = robust_barrier(s_values, v_theta, inputs.eta)
    rate = np.diff(s_theta) / np.diff(t)
    decay = inputs.eta_c * inputs.k3 / inputs.eta
    bound = -decay * 0.5 * (s_theta[1:] + s_theta[:-1])
    return rate - bound
