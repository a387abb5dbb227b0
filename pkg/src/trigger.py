"""
触发机制模块
事件/自触发的稳定性阈值、基于 M̄ 反函数的安全阈值、安全周期公式与组合触发判断
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import optimize

from src.safety import nu_d
from src.utils import ParameterDomainError, SafetyViolationError, get_logger

logger = get_logger('trigger')

TRIGGER_MODES = ('monitor', 'period')


def derive_chi(mu, pi, lambda_min_Q):
    """χ1 = (1-μ)(1-π)λ_min(Q), χ2 = (1-μ)(1/π-1)λ_min(Q)"""
    return ((1.0 - mu) * (1.0 - pi) * lambda_min_Q,
            (1.0 - mu) * (1.0 / pi - 1.0) * lambda_min_Q)


@dataclass
class TriggerParams:
    """
    触发阈值参数

    Attributes:
        mu, pi: 阈值推导中的常数, 均在 (0, 1)
        lambda_min_Q: λ_min(Q)
        d_v: 名义控制的 Lipschitz 常数
        R_norm: ‖R‖
        chi1, chi2: 自触发阈值常数 (None 时由 mu, pi 推导)
        p: M̄ 参数形式的 (p1..p5)
        l: 安全周期公式常数 (l1, l2, l3), period 模式需要
        m_form: 'parametric' 或 'theoretical'
        theoretical: 理论形式 M̄ 的常数字典
    """
    mu: float = 0.5
    pi: float = 0.5
    lambda_min_Q: float = 1.0
    d_v: float = 1.0
    R_norm: float = 1.0
    chi1: Optional[float] = None
    chi2: Optional[float] = None
    p: Tuple[float, ...] = (10.0, 1.0, 5.0, 5.0, 10.0)
    l: Optional[Tuple[float, float, float]] = None
    m_form: str = 'parametric'
    theoretical: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.mu < 1.0 and 0.0 < self.pi < 1.0):
            raise ParameterDomainError(f"μ, π 必须在 (0, 1) 内: μ={self.mu}, π={self.pi}")
        if self.d_v <= 0:
            raise ParameterDomainError(f"d_v 必须为正: {self.d_v}")
        chi1, chi2 = derive_chi(self.mu, self.pi, self.lambda_min_Q)
        if self.chi1 is None:
            self.chi1 = chi1
        elif abs(self.chi1 - chi1) > 1e-12:
            raise ParameterDomainError(f"χ1={self.chi1} 与 (μ, π, λ_min(Q)) 推导值 {chi1} 不一致")
        if self.chi2 is None:
            self.chi2 = chi2
        elif abs(self.chi2 - chi2) > 1e-12:
            raise ParameterDomainError(f"χ2={self.chi2} 与 (μ, π, λ_min(Q)) 推导值 {chi2} 不一致")
        if len(self.p) != 5:
            raise ParameterDomainError(f"M̄ 需要 5 个参数, 得到 {len(self.p)}")
        if self.m_form not in ('parametric', 'theoretical'):
            raise ParameterDomainError(f"未知的 M̄ 形式: {self.m_form}")


@dataclass
class TriggerState:
    """
    触发器状态, 阈值只在触发时刻根据采样状态更新

    Attributes:
        t_j: 最近一次触发时刻
        x_sample: 采样状态 x̆_j
        theta_at_sample: 采样时刻的参数估计
        u_held: 保持的控制
        lambda_held: 保持的乘子
        nu_d_at_sample: 采样时刻的约束裕度
        threshold_v, threshold_s: 稳定性与安全阈值
        period: period 模式下的下一次触发间隔
    """
    t_j: float = 0.0
    x_sample: Optional[np.ndarray] = None
    theta_at_sample: Optional[np.ndarray] = None
    u_held: Optional[np.ndarray] = None
    lambda_held: float = 0.0
    nu_d_at_sample: float = 0.0
    threshold_v: float = np.inf
    threshold_s: float = np.inf
    period: float = np.inf
    trigger_count: int = 0
    min_interval: float = np.inf
    boundary_touches: int = 0
    violations: int = 0


def f_v_event(params, x_norm):
    """事件触发稳定性阈值 sqrt((1-μ)λ_min(Q)‖x‖²/(2d_v²‖R‖))"""
    gain = (1.0 - params.mu) * params.lambda_min_Q / (2.0 * params.d_v ** 2 * params.R_norm)
    return float(np.sqrt(gain) * x_norm)


def f_v_self(params, x_sample_norm):
    """自触发稳定性阈值 sqrt(χ1‖x̆‖²/(2d_v²‖R‖ + χ2))"""
    gain = params.chi1 / (2.0 * params.d_v ** 2 * params.R_norm + params.chi2)
    return float(np.sqrt(gain) * x_sample_norm)


def m_bar_parametric(params, e_norm, x_sample_norm):
    """M̄ = p1‖ĕ‖ + p2 ln(1 + p3‖ĕ‖/(p4‖x̆‖ + p5))"""
    p1, p2, p3, p4, p5 = params.p
    denom = p4 * x_sample_norm + p5
    if denom <= 0:
        raise ParameterDomainError(f"p4‖x̆‖ + p5 必须为正: {denom}")
    return float(p1 * e_norm + p2 * np.log1p(p3 * e_norm / denom))


def m_bar_theoretical(params, e_norm, x_sample_norm):
    """
    Lipschitz 常数形式的 M̄:
    [d1‖θ‖̄ + d2‖u‖̄ + d3k3η_c/η]‖ĕ‖ + (η-η_c)k1k3²‖θ̃‖̄²·T_s(‖ĕ‖)

    常数取自 params.theoretical: d1, d2, d3, theta_bound, u_bound, theta_err_bound,
    k1, k3, eta, eta_c
    """
    c = params.theoretical
    try:
        slope = (c['d1'] * c['theta_bound'] + c['d2'] * c['u_bound']
                 + c['d3'] * c['k3'] * c['eta_c'] / c['eta'])
        hold = (c['eta'] - c['eta_c']) * c['k1'] * c['k3'] ** 2 * c['theta_err_bound'] ** 2
    except KeyError as e:
        raise ParameterDomainError(f"理论形式 M̄ 缺少常数: {e}")
    return float(slope * e_norm + hold * safe_period(params, e_norm, x_sample_norm))


def m_bar(params, e_norm, x_sample_norm):
    """M̄_j(‖ĕ‖), 关于 ‖ĕ‖ 严格递增且 M̄(0) = 0"""
    if params.m_form == 'theoretical':
        return m_bar_theoretical(params, e_norm, x_sample_norm)
    return m_bar_parametric(params, e_norm, x_sample_norm)


def m_bar_inverse(params, target, x_sample_norm):
    """
    M̄ 的反函数 (括区间后 Brent 求根)

    Args:
        params: TriggerParams
        target: 目标值 (>= 0)
        x_sample_norm: ‖x̆_j‖

    Returns:
        e_norm: 满足 M̄(e_norm) = target
    """
    if target < 0:
        raise ParameterDomainError(f"M̄⁻¹ 的参数不能为负: {target}")
    if target == 0:
        return 0.0

    def residual(e):
        return m_bar(params, e, x_sample_norm) - target

    hi = max(target / max(params.p[0], 1.0), 1e-12)
    while residual(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            raise ParameterDomainError(f"M̄ 无法达到目标值 {target}")

    return float(optimize.brentq(residual, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                 maxiter=500))


def f_s_self(model, spec, params, x_sample, theta_hat, u_held):
    """
    自触发安全阈值
    ν_d >= (1-γ)α_s s(x̆) 时取 M̄⁻¹(ν_d), 否则取 M̄⁻¹((1-γ)α_s s(x̆))

    Returns:
        threshold: 非负阈值
    """
    s = spec.barrier(x_sample)
    if s < 0:
        raise SafetyViolationError(f"采样状态位于安全集外: s(x̆)={s:.3e}")

    margin = nu_d(model, spec, x_sample, theta_hat, u_held)
    floor = (1.0 - spec.relax) * spec.alpha(s)
    target = margin if margin >= floor else floor
    return m_bar_inverse(params, max(target, 0.0), float(np.linalg.norm(x_sample)))


def safe_period(params, e_bound, x_sample_norm):
    """
    误差从零增长到 e_bound 所需时间的下界
    T = ln(1 + (l1+l2)e_bound/(l1‖x̆‖ + l3)) / (l1 + l2)
    """
    if params.l is None:
        raise ParameterDomainError("未配置安全周期常数 (l1, l2, l3)")
    l1, l2, l3 = params.l
    rate = l1 + l2
    offset = l1 * x_sample_norm + l3
    if rate <= 0 or offset <= 0:
        raise ParameterDomainError(f"安全周期公式分母退化: l1+l2={rate}, l1‖x̆‖+l3={offset}")
    return float(np.log1p(rate * e_bound / offset) / rate)


def estimate_interval_constants(model, theta_bound, d_v, domain_radius, u_max,
                                samples=2000, rng_seed=0, theta_hat=None):
    """
    采样估计安全周期常数: l1 = d_ζ, l2 = d_v·sup‖ρ‖, l3 = sup‖ρ‖·u_max

    给定 theta_hat 时 l1 = sup‖ω(x)θ̂‖/‖x‖, 否则用 sup‖ω(x)‖·theta_bound.
    触发时刻重新估计时 u_max 取迄今执行过的最大 |u|

    Args:
        model: SystemModel
        theta_bound: ‖θ‖ 的上界
        d_v: 控制 Lipschitz 常数
        domain_radius: 采样球半径
        u_max: 控制幅值上界
        theta_hat: 当前参数估计, 可为空

    Returns:
        (l1, l2, l3)
    """
    rng = np.random.default_rng(rng_seed)
    directions = rng.normal(size=(samples, model.n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = domain_radius * rng.random(samples) ** (1.0 / model.n)
    states = directions * radii[:, None]
    if theta_hat is not None:
        theta_hat = np.asarray(theta_hat, dtype=float)

    d_zeta = 0.0
    rho_sup = 0.0
    for x in states:
        norm_x = np.linalg.norm(x)
        if norm_x > 1e-9:
            if theta_hat is None:
                growth = np.linalg.norm(model.omega(x), 2) * theta_bound
            else:
                growth = np.linalg.norm(model.omega(x) @ theta_hat)
            d_zeta = max(d_zeta, growth / norm_x)
        rho_sup = max(rho_sup, np.linalg.norm(model.rho(x), 2))

    return float(d_zeta), float(d_v * rho_sup), float(rho_sup * u_max)


def arm(trigger_state, model, spec, params, t, x, theta_hat, u, lam, mode='monitor',
        tolerate_violation=False):
    """
    在触发时刻刷新触发器: 记录采样量, 重新计算两个阈值 (period 模式还计算触发间隔)

    Args:
        trigger_state: TriggerState
        t: 触发时刻
        x: 采样状态
        theta_hat: 采样时刻参数估计
        u, lam: 新的保持控制与乘子
        mode: 'monitor' 或 'period'
        tolerate_violation: 采样状态在安全集外时把安全阈值置 0 而不报错
    """
    ts = trigger_state
    if ts.trigger_count > 0:
        ts.min_interval = min(ts.min_interval, t - ts.t_j)

    x = np.array(x, dtype=float)
    ts.t_j = float(t)
    ts.x_sample = x
    ts.theta_at_sample = np.array(theta_hat, dtype=float)
    ts.u_held = np.array(u, dtype=float)
    ts.lambda_held = float(lam)
    ts.nu_d_at_sample = nu_d(model, spec, x, theta_hat, u)
    ts.trigger_count += 1

    x_norm = float(np.linalg.norm(x))
    ts.threshold_v = f_v_self(params, x_norm)
    try:
        ts.threshold_s = f_s_self(model, spec, params, x, theta_hat, u)
    except SafetyViolationError:
        if not tolerate_violation:
            raise
        # 安全集外每步重新采样
        ts.threshold_s = 0.0
        ts.violations += 1
        logger.warning(f"t={t:.3f}s 采样状态位于安全集外 (s={spec.barrier(x):.3e})")
    if ts.threshold_s == 0.0 and spec.barrier(x) >= 0:
        ts.boundary_touches += 1
        logger.warning(f"t={t:.3f}s 采样状态位于安全边界, 安全阈值为 0")

    if mode == 'period':
        ts.period = min(safe_period(params, ts.threshold_v, x_norm),
                        safe_period(params, ts.threshold_s, x_norm))

    logger.debug(f"t={t:.3f}s 触发 #{ts.trigger_count}: 阈值 v={ts.threshold_v:.4e}, "
                 f"s={ts.threshold_s:.4e}, λ={lam:.4e}")
    return ts


def should_trigger(trigger_state, params, x_now, t=None, mode='monitor'):
    """
    组合触发条件: ‖x - x̆_j‖ > min(f_v,self, f_s,self) (严格不等号);
    period 模式下 t >= t_j + T_j 时触发

    Returns:
        flag: 是否触发
    """
    ts = trigger_state
    if mode == 'period':
        if t is None:
            raise ValueError("period 模式需要当前时刻")
        # 网格时间累加误差
        return t - ts.t_j >= ts.period - 1e-12
    error = float(np.linalg.norm(np.asarray(x_now, dtype=float) - ts.x_sample))
    return error > min(ts.threshold_v, ts.threshold_s)
