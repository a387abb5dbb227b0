"""
评价网络模块
状态跟随 (StaF) 核函数值函数逼近、近似安全控制器、Bellman 误差与最小二乘权值更新
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from src.safety import corrected_control, lagrange_multiplier, spd_inverse
from src.utils import InternalConsistencyError, NumericDomainError, get_logger

logger = get_logger('critic')

# σ_i 指数的上限, 超过即认为状态离开紧集
EXPONENT_LIMIT = 50.0


@dataclass(frozen=True)
class KernelConfig:
    """
    StaF 核配置: σ_i(x, υ_i) = exp(xᵀυ_i) - 1, υ_i(x) = x + b_i(x)

    Attributes:
        offsets: L 个偏移函数 b_i(x)
        shape: 形状函数 φ(x)
        radius: ‖b_i(x)‖ 的上界 r
    """
    offsets: Sequence[Callable]
    shape: Callable
    radius: float

    @property
    def L(self):
        return len(self.offsets)


def _benchmark_shape(x):
    xx = float(np.asarray(x, dtype=float) @ np.asarray(x, dtype=float))
    return (xx + 0.01) / (1.0 + xx)


def benchmark_kernels(scale=0.7, directions=((0.0, 1.0), (0.85, -0.6), (-0.85, -0.6))):
    """
    基准系统的三个状态跟随核, b_i(x) = 0.7φ(x)d_i, φ(x) = (xᵀx + 0.01)/(1 + xᵀx)

    Returns:
        config: KernelConfig
    """
    dirs = [np.asarray(d, dtype=float) for d in directions]

    def make_offset(d):
        return lambda x: scale * _benchmark_shape(x) * d

    # φ < 1, 故 ‖b_i‖ < scale·max‖d_i‖
    radius = scale * max(np.linalg.norm(d) for d in dirs)
    return KernelConfig(offsets=tuple(make_offset(d) for d in dirs),
                        shape=_benchmark_shape, radius=float(radius))


def centers(config, x):
    """状态跟随中心 υ_i(x), 形状 (L, n)"""
    x = np.asarray(x, dtype=float)
    offsets = np.array([b(x) for b in config.offsets], dtype=float)
    if np.any(np.linalg.norm(offsets, axis=1) > config.radius * (1.0 + 1e-12)):
        raise NumericDomainError(f"核中心偏移超出半径 {config.radius}")
    return x[None, :] + offsets


def kernels(config, x_eval, x_center):
    """
    核向量及其对 x_eval 的偏导 (中心 υ(x_center) 视为固定)

    Args:
        config: KernelConfig
        x_eval: 求值点
        x_center: 决定中心的状态

    Returns:
        (sigma (L,), grad_sigma (L, n))
    """
    ups = centers(config, x_center)
    z = ups @ np.asarray(x_eval, dtype=float)
    if np.any(np.abs(z) > EXPONENT_LIMIT):
        raise NumericDomainError(f"核指数溢出: max|xᵀυ|={np.max(np.abs(z)):.3e}")
    ez = np.exp(z)
    return np.expm1(z), ez[:, None] * ups


@dataclass
class CriticState:
    """
    评价网络状态

    Attributes:
        W_hat: 权值 Ŵ_s
        Gamma: 最小二乘增益矩阵 Γ
        k_c1, k_c2: 学习率
        beta: 遗忘因子
        norm_gain: 归一化 ι = sqrt(1 + γξᵀξ) 中的 γ
        norm_power: 权值律中 Bellman 误差项的归一化次数 q, 即 ξ/ι^q
        n_replay: 外推状态数 N
        replay: 历史状态缓冲区
        gamma_bounds: Γ 特征值截断区间
    """
    W_hat: np.ndarray
    Gamma: np.ndarray
    k_c1: float
    k_c2: float
    beta: float
    norm_gain: float = 1.0
    norm_power: int = 1
    n_replay: int = 3
    replay: deque = field(default_factory=lambda: deque(maxlen=2000))
    gamma_bounds: tuple = (1e-3, 1e4)
    rng: Optional[np.random.Generator] = None
    clamp_events: int = 0
    last_pe_level: float = 0.0


def make_critic(L, w0, gamma0, k_c1, k_c2, beta, norm_gain=1.0, n_replay=3,
                replay_capacity=2000, gamma_bounds=(1e-3, 1e4), rng_seed=42, norm_power=1):
    """
    构造评价网络状态

    Args:
        L: 核个数
        w0: 初始权值 (标量或长度 L)
        gamma0: 初始 Γ (标量或 (L, L))
        其余参数见 CriticState
    """
    W = np.broadcast_to(np.asarray(w0, dtype=float), (L,)).copy()
    G = np.asarray(gamma0, dtype=float)
    if G.ndim == 0:
        G = float(G) * np.eye(L)
    if replay_capacity < n_replay:
        raise ValueError(f"回放容量 {replay_capacity} 小于外推数 {n_replay}")
    if norm_power not in (1, 2):
        raise ValueError(f"归一化次数只能为 1 或 2: {norm_power}")

    return CriticState(
        W_hat=W, Gamma=G.copy(), k_c1=float(k_c1), k_c2=float(k_c2), beta=float(beta),
        norm_gain=float(norm_gain), norm_power=int(norm_power), n_replay=int(n_replay),
        replay=deque(maxlen=int(replay_capacity)),
        gamma_bounds=(float(gamma_bounds[0]), float(gamma_bounds[1])),
        rng=np.random.default_rng(rng_seed),
    )


def value(config, critic, x):
    """近似值函数 V̂ = Ŵᵀσ(x, υ(x))"""
    sigma, _ = kernels(config, x, x)
    return float(critic.W_hat @ sigma)


def nominal_control(model, config, critic, x, R):
    """名义控制 û_no = -R⁻¹ρᵀ(∇σ)ᵀŴ"""
    _, grad = kernels(config, x, x)
    return -spd_inverse(R) @ (model.rho(x).T @ (grad.T @ critic.W_hat))


def safe_control(model, spec, config, critic, x, theta_hat, R, self_triggered=False):
    """
    近似最优安全控制 û = R⁻¹[λ̂ L_ρ sᵀ - ρᵀ(∇σ)ᵀŴ]

    Args:
        self_triggered: 使用自触发约束 ν_d 计算 λ̂

    Returns:
        (u, lambda_hat)
    """
    u_no = nominal_control(model, config, critic, x, R)
    lam = lagrange_multiplier(model, spec, x, theta_hat, u_no, R, self_triggered=self_triggered)
    return corrected_control(model, spec, x, u_no, lam, R), lam


def _regressor(model, config, critic, x, theta_hat, u_held, Q, R):
    """Bellman 误差 δ 与回归向量 ξ = ∇σ(ω θ̂ + ρ u)"""
    x = np.asarray(x, dtype=float)
    u_held = np.asarray(u_held, dtype=float)
    _, grad = kernels(config, x, x)
    xi = grad @ (model.omega(x) @ theta_hat + model.rho(x) @ u_held)
    cost = float(x @ np.asarray(Q, dtype=float) @ x
                 + 0.5 * u_held @ np.atleast_2d(R) @ u_held)
    return float(critic.W_hat @ xi) + cost, xi


def bellman_error(model, spec, config, critic, x, theta_hat, u_held, Q, R):
    """
    Bellman 误差 δ = Ŵᵀ∇σ(ω(x)θ̂ + ρ(x)u) + xᵀQx + ½uᵀRu

    λ·ν 项由互补松弛为零, 不计入
    """
    delta, _ = _regressor(model, config, critic, x, theta_hat, u_held, Q, R)
    return delta


def sample_replay(critic, rng_seed=None):
    """
    从缓冲区有放回均匀抽取 N 个历史状态

    Args:
        critic: CriticState
        rng_seed: 给定时使用独立生成器, 否则使用评价网络自带生成器

    Returns:
        states: 状态列表 (缓冲区为空时为空列表)
    """
    if not critic.replay or critic.n_replay == 0:
        return []
    rng = np.random.default_rng(rng_seed) if rng_seed is not None else critic.rng
    if rng is None:
        rng = np.random.default_rng()
        critic.rng = rng
    idx = rng.integers(0, len(critic.replay), size=critic.n_replay)
    return [critic.replay[i] for i in idx]


def push_replay(critic, x):
    """把状态存入回放缓冲区"""
    critic.replay.append(np.array(x, dtype=float))


def pe_level(critic, xi, iota, replay_terms=()):
    """
    持续激励水平 λ_min(k_c1ξξᵀ/ι² + (k_c2/N)Σξ_iξ_iᵀ/ι_i²)

    Args:
        xi, iota: 当前回归向量与归一化项
        replay_terms: [(xi_i, iota_i), ...]
    """
    xi = np.asarray(xi, dtype=float)
    M = critic.k_c1 * np.outer(xi, xi) / iota ** 2
    if replay_terms:
        scale = critic.k_c2 / len(replay_terms)
        for xi_i, iota_i in replay_terms:
            M = M + scale * np.outer(xi_i, xi_i) / iota_i ** 2
    return float(max(np.linalg.eigvalsh(M)[0], 0.0))


def _clamp_gamma(critic):
    """对称化 Γ 并把特征值截断到 [Γ_lo, Γ_hi]"""
    G = 0.5 * (critic.Gamma + critic.Gamma.T)
    if not np.all(np.isfinite(G)):
        raise InternalConsistencyError("Γ 出现非有限值")
    eigvals, eigvecs = np.linalg.eigh(G)
    lo, hi = critic.gamma_bounds
    clipped = np.clip(eigvals, lo, hi)
    if np.any(clipped != eigvals):
        if critic.clamp_events == 0:
            logger.warning(f"Γ 特征值越界 {eigvals}, 截断到 [{lo}, {hi}]")
        critic.clamp_events += 1
        G = (eigvecs * clipped) @ eigvecs.T
        G = 0.5 * (G + G.T)
    if np.linalg.eigvalsh(G)[0] <= 0.0:
        raise InternalConsistencyError("Γ 截断后失去正定性")
    critic.Gamma = G


def update(critic, model, spec, config, x, theta_hat, u_held, Q, R, dt, replay_states=None):
    """
    权值与增益矩阵 Euler 一步

    dŴ/dt = -k_c1Γ(ξ/ι^q)δ - (k_c2/N)ΓΣ(ξ_i/ι_i^q)δ_i, q = critic.norm_power
    dΓ/dt = βΓ - k_c1Γ(ξξᵀ/ι²)Γ - (k_c2/N)ΓΣ(ξ_iξ_iᵀ/ι_i²)Γ

    q = 2 时权值律与 Γ 律使用同一归一化 ξ/ι², 单步权值增量不随 ‖ξ‖ 增大;
    q = 1 时 ‖dŴ/dt‖ 与 |δ| 同阶, 核指数较大时权值可能在一步内变号.

    Args:
        critic: CriticState
        x: 当前状态
        theta_hat: 参数估计
        u_held: 保持的控制 (外推状态也使用该控制)
        replay_states: 外推状态, None 时从缓冲区抽取

    Returns:
        critic: 原地更新后的状态
    """
    if replay_states is None:
        replay_states = sample_replay(critic)

    delta, xi = _regressor(model, config, critic, x, theta_hat, u_held, Q, R)
    iota = np.sqrt(1.0 + critic.norm_gain * (xi @ xi))

    G = critic.Gamma
    Gxi = G @ xi
    q = critic.norm_power
    d_W = -critic.k_c1 * Gxi * delta / iota ** q
    d_Gamma = critic.beta * G - critic.k_c1 * np.outer(Gxi, Gxi) / iota ** 2

    replay_terms = []
    if replay_states:
        scale = critic.k_c2 / len(replay_states)
        for x_i in replay_states:
            delta_i, xi_i = _regressor(model, config, critic, x_i, theta_hat, u_held, Q, R)
            iota_i = np.sqrt(1.0 + critic.norm_gain * (xi_i @ xi_i))
            Gxi_i = G @ xi_i
            d_W = d_W - scale * Gxi_i * delta_i / iota_i ** q
            d_Gamma = d_Gamma - scale * np.outer(Gxi_i, Gxi_i) / iota_i ** 2
            replay_terms.append((xi_i, iota_i))

    critic.last_pe_level = pe_level(critic, xi, iota, replay_terms)
    critic.W_hat = critic.W_hat + dt * d_W
    critic.Gamma = G + dt * d_Gamma
    _clamp_gamma(critic)

    return critic
