"""
闭环仿真模块
整合被控对象、辨识器、评价网络、安全约束与触发机制, 提供控制器变体对比与指标计算
"""

import os
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy import integrate

from src.critic import (benchmark_kernels, kernels, make_critic, nominal_control, push_replay,
                        safe_control, update as update_critic)
from src.dynamics import TrajectoryLog, benchmark_system, step_rk4
from src.identifier import integrate_filters, make_identifier, monitor_excitation, update_theta
from src.safety import (SafetySpec, compensation, corrected_control, half_plane_barrier,
                        lagrange_multiplier, lie_derivatives, nu, nu_d, obstacle_barrier)
from src.trigger import (TriggerParams, TriggerState, arm, estimate_interval_constants,
                         should_trigger)
from src.utils import ConfigError, InfeasibleConstraintError, SafeCriticError, get_logger

logger = get_logger('sim')

# 该时刻之后开始统计持续激励水平的下确界
PE_WINDOW_START = 1.0


@dataclass
class ControlDecision:
    """一次控制计算的结果: 执行的控制、评价网络学习所用控制、乘子"""
    u_exec: np.ndarray
    u_learn: np.ndarray
    lam: float
    infeasible: bool = False


@dataclass
class RunMetrics:
    """
    单次运行指标

    Attributes:
        cost: 有限时域代价
        min_barrier: min s(x(t))
        trigger_count: 控制计算次数 (时间触发时等于步数)
        min_inter_event: 最小触发间隔
        final_theta_error: ‖θ̂(T) - θ‖∞
        final_weights: 终端权值
        infeasibility_events: 约束不可执行次数
        gamma_clamp_events: Γ 特征值截断次数
        excitation_time: 有限激励条件首次满足的时刻
        pe_infimum: t >= 1s 之后持续激励水平的下确界
        refresh_count: 辨识器刷新次数
        max_slackness_residual: 触发时刻 |λ·ν| 的最大归一化残差
    """
    cost: float
    min_barrier: float
    trigger_count: int
    min_inter_event: float
    final_theta_error: float
    final_weights: np.ndarray
    infeasibility_events: int
    gamma_clamp_events: int
    excitation_time: Optional[float]
    pe_infimum: float
    refresh_count: int
    max_slackness_residual: float
    boundary_touches: int = 0
    safety_violation_samples: int = 0

    def to_dict(self):
        data = asdict(self)
        data['final_weights'] = np.asarray(self.final_weights).tolist()
        return data


def build_safety(config):
    """根据配置构造 SafetySpec, u1 变体去掉补偿项"""
    sc = config.safety
    if sc.kind == 'obstacle':
        barrier, grad = obstacle_barrier(sc.center, sc.radius)
    else:
        barrier, grad = half_plane_barrier()
    comp_scale = 0.0 if config.variant == 'u1_baseline_cbf' else sc.comp_scale
    return SafetySpec(barrier=barrier, barrier_grad=grad, alpha_gain=sc.alpha_gain,
                      comp_scale=comp_scale, relax=sc.relax, name=sc.kind)


def build_trigger_params(config, model):
    """
    构造触发参数; 需要安全周期公式且未配置 l 时采样估计 (l1, l2, l3)
    """
    tc = config.trigger
    l_consts = tc.l
    needs_period = tc.m_form == 'theoretical' or config.trigger_mode == 'period'
    if l_consts is None and needs_period:
        l_consts = estimate_interval_constants(model, tc.theta_bound, tc.d_v, tc.domain_radius,
                                               tc.u_max, rng_seed=config.rng_seed)
        logger.info(f"估计安全周期常数 l = ({l_consts[0]:.4g}, {l_consts[1]:.4g}, "
                    f"{l_consts[2]:.4g})")

    return TriggerParams(
        mu=tc.mu, pi=tc.pi,
        lambda_min_Q=float(np.linalg.eigvalsh(np.asarray(config.Q, dtype=float))[0]),
        d_v=tc.d_v,
        R_norm=float(np.linalg.norm(np.atleast_2d(config.R), 2)),
        p=tuple(float(v) for v in tc.p),
        l=tuple(float(v) for v in l_consts) if l_consts is not None else None,
        m_form=tc.m_form,
        theoretical=dict(tc.theoretical),
    )


def variant_controller(config, model, spec, kernel_config):
    """
    按控制器变体返回控制计算回调

    u1_baseline_cbf / u3_rcbf_embedded: 安全嵌入控制, 学习与执行同一控制 (u1 的 ϖ 已为 0)
    u2_rcbf_filter: 评价网络按名义控制学习, RCBF 只作为执行控制的逐点滤波

    Returns:
        decide(critic, x, theta_hat) -> ControlDecision
    """
    R = np.atleast_2d(np.asarray(config.R, dtype=float))
    self_triggered = config.mode == 'self_triggered'
    filter_only = config.variant == 'u2_rcbf_filter'
    strict = config.strict_feasibility

    def decide(critic, x, theta_hat):
        u_no = nominal_control(model, kernel_config, critic, x, R)
        try:
            if filter_only:
                lam = lagrange_multiplier(model, spec, x, theta_hat, u_no, R,
                                          self_triggered=self_triggered)
                return ControlDecision(corrected_control(model, spec, x, u_no, lam, R), u_no, lam)
            u, lam = safe_control(model, spec, kernel_config, critic, x, theta_hat, R,
                                  self_triggered=self_triggered)
            return ControlDecision(u, u, lam)
        except InfeasibleConstraintError as e:
            if strict:
                raise
            logger.debug(f"{e.message}, 保持名义控制")
            return ControlDecision(u_no, u_no, 0.0, infeasible=True)

    return decide


class Simulator:
    """闭环仿真器"""

    def __init__(self, config):
        """
        初始化仿真器

        Args:
            config: ExperimentConfig
        """
        self.config = config
        self.model = benchmark_system()
        self.spec = build_safety(config)
        self.kernel_config = benchmark_kernels(scale=config.critic.kernel_scale)
        self.params = build_trigger_params(config, self.model)
        self.Q = np.asarray(config.Q, dtype=float)
        self.R = np.atleast_2d(np.asarray(config.R, dtype=float))
        self.self_triggered = config.mode == 'self_triggered'

        ic = config.identifier
        self.identifier = make_identifier(
            self.model, ic.theta0, ic.gamma_theta, ic.omega_f_bound,
            refresh_enabled=ic.refresh, excitation_threshold=ic.excitation_threshold)

        cc = config.critic
        self.critic = make_critic(
            self.kernel_config.L, cc.w0, cc.gamma0, cc.k_c1, cc.k_c2, cc.beta,
            norm_gain=cc.norm_gain, n_replay=cc.n_replay, replay_capacity=cc.replay_capacity,
            gamma_bounds=tuple(cc.gamma_bounds), rng_seed=config.rng_seed,
            norm_power=cc.norm_power)

        self.decide = variant_controller(config, self.model, self.spec, self.kernel_config)
        self.trigger_state = TriggerState()
        self.log = TrajectoryLog()
        self.decision = None

        self.trigger_count = 0
        self.last_trigger_step = None
        self.min_gap_steps = None
        self.infeasibility_events = 0
        self.max_slackness = 0.0
        self.pe_infimum = np.inf
        # period 模式且未配置 l 时, 每次触发按 θ̂ 与已执行的最大 |u| 重新估计 l
        self.refine_interval = (self.self_triggered and config.trigger_mode == 'period'
                                and config.trigger.l is None)
        self.u_observed = 0.0

    def _slackness_residual(self, x, theta_hat, decision):
        """|λ·ν(u)| 按约束各项量级归一化"""
        if decision.lam == 0.0:
            return 0.0
        margin_fn = nu_d if self.self_triggered else nu
        margin = margin_fn(self.model, self.spec, x, theta_hat, decision.u_exec)
        L_omega, L_rho = lie_derivatives(self.model, self.spec, x)
        scale = 1.0 + decision.lam * (abs(L_omega @ theta_hat)
                                      + abs(L_rho @ decision.u_exec)
                                      + abs(self.spec.alpha(self.spec.barrier(x)))
                                      + compensation(self.model, self.spec, x))
        return abs(decision.lam * margin) / scale

    def _interval_constants(self, theta_hat):
        """由当前 θ̂ 与迄今最大 |u| 估计 (l1, l2, l3)"""
        tc = self.config.trigger
        u_bound = self.u_observed if self.u_observed > 0 else tc.u_max
        return estimate_interval_constants(self.model, tc.theta_bound, tc.d_v, tc.domain_radius,
                                           u_bound, rng_seed=self.config.rng_seed,
                                           theta_hat=theta_hat)

    def _sample(self, k, t, x):
        """触发时刻: 重新计算控制与乘子, 自触发模式下刷新阈值"""
        theta_hat = self.identifier.theta_hat.copy()
        decision = self.decide(self.critic, x, theta_hat)
        if decision.infeasible:
            if self.infeasibility_events == 0:
                logger.warning(f"t={t:.3f}s 安全约束不可执行, 保持名义控制")
            self.infeasibility_events += 1
        self.decision = decision
        self.max_slackness = max(self.max_slackness,
                                 self._slackness_residual(x, theta_hat, decision))

        if self.refine_interval:
            self.u_observed = max(self.u_observed, float(np.max(np.abs(decision.u_exec))))
            self.params = replace(self.params, l=self._interval_constants(theta_hat))

        if self.self_triggered:
            arm(self.trigger_state, self.model, self.spec, self.params, t, x, theta_hat,
                decision.u_exec, decision.lam, mode=self.config.trigger_mode,
                tolerate_violation=not self.config.strict_feasibility)

        if self.last_trigger_step is not None:
            gap = k - self.last_trigger_step
            self.min_gap_steps = gap if self.min_gap_steps is None else min(self.min_gap_steps, gap)
        self.last_trigger_step = k
        self.trigger_count += 1

    def _record(self, t, x, triggered):
        d = self.decision
        true_margin = nu(self.model, self.spec, x, self.model.theta_true, d.u_exec)
        self.log.record(t, x, d.u_exec, self.spec.barrier(x), d.lam, self.identifier.theta_hat,
                        self.critic.W_hat, triggered, true_margin)

    def _advance(self, k, x, x0, fired_last):
        """推进一个网格步, 返回 (新状态, 是否触发)"""
        cfg = self.config
        dt = cfg.dt
        t = k * dt
        d = self.decision

        # 对象始终按真实参数积分
        x_next = step_rk4(self.model, x, d.u_exec, self.model.theta_true, dt, step_index=k)

        integrate_filters(self.identifier, self.model, x, d.u_exec, x0, dt, x_next=x_next,
                          t=(k - 1) * dt)
        learn = fired_last or not (cfg.gated_learning and self.self_triggered)
        if learn:
            update_theta(self.identifier, x_next, dt)
            push_replay(self.critic, x_next)
            update_critic(self.critic, self.model, self.spec, self.kernel_config, x_next,
                          self.identifier.theta_hat, d.u_learn, self.Q, self.R, dt)
            if t >= PE_WINDOW_START:
                self.pe_infimum = min(self.pe_infimum, self.critic.last_pe_level)
        monitor_excitation(self.identifier, t)

        fired = False
        if k < cfg.n_steps:
            if self.self_triggered:
                fired = should_trigger(self.trigger_state, self.params, x_next, t=t,
                                       mode=cfg.trigger_mode)
            else:
                fired = True
            if fired:
                self._sample(k, t, x_next)

        self._record(t, x_next, fired)
        return x_next, fired

    def run(self):
        """
        执行闭环仿真

        Returns:
            (log, metrics): TrajectoryLog 与 RunMetrics
        """
        cfg = self.config
        logger.info(f"开始仿真: 预设={cfg.preset}, 模式={cfg.mode}, 变体={cfg.variant}, "
                    f"步数={cfg.n_steps}")

        x0 = np.array(cfg.x0, dtype=float)
        x = x0.copy()
        k = 0
        try:
            self._sample(0, 0.0, x)
            self._record(0.0, x, True)
            fired = True
            for k in range(1, cfg.n_steps + 1):
                x, fired = self._advance(k, x, x0, fired)
        except SafeCriticError as e:
            err = e.at_step(k)
            if err is e:
                raise
            raise err from e

        metrics = self.metrics()
        logger.info(f"仿真结束: 代价={metrics.cost:.4f}, 最小障碍值={metrics.min_barrier:.4e}, "
                    f"触发次数={metrics.trigger_count}")
        if self.infeasibility_events:
            logger.warning(f"约束不可执行共 {self.infeasibility_events} 次")
        if self.critic.clamp_events:
            logger.warning(f"Γ 特征值截断共 {self.critic.clamp_events} 次")
        return self.log, metrics

    def metrics(self):
        """根据当前轨迹汇总指标"""
        dt = self.config.dt
        theta_err = self.identifier.theta_hat - self.model.theta_true
        return RunMetrics(
            cost=cost(self.log, self.Q, self.R),
            min_barrier=float(min(self.log.barrier_values)),
            trigger_count=self.trigger_count,
            min_inter_event=self.min_gap_steps * dt if self.min_gap_steps else np.inf,
            final_theta_error=float(np.max(np.abs(theta_err))),
            final_weights=self.critic.W_hat.copy(),
            infeasibility_events=self.infeasibility_events,
            gamma_clamp_events=self.critic.clamp_events,
            excitation_time=self.identifier.excitation_time,
            pe_infimum=float(self.pe_infimum),
            refresh_count=self.identifier.refresh_count,
            max_slackness_residual=float(self.max_slackness),
            boundary_touches=self.trigger_state.boundary_touches,
            safety_violation_samples=self.trigger_state.violations,
        )


def run(config):
    """
    单次闭环仿真

    Args:
        config: ExperimentConfig

    Returns:
        (TrajectoryLog, RunMetrics)
    """
    return Simulator(config).run()


def cost(log, Q, R):
    """
    有限时域代价 ∫ xᵀQx + ½uᵀRu dt (梯形公式)

    Args:
        log: 非空 TrajectoryLog
        Q, R: 权重矩阵

    Returns:
        cost: 非负标量
    """
    if len(log) == 0:
        raise ValueError("轨迹为空")
    X = np.vstack(log.states)
    U = np.vstack(log.controls)
    Q = np.asarray(Q, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    running = np.einsum('ki,ij,kj->k', X, Q, X) + 0.5 * np.einsum('ki,ij,kj->k', U, R, U)
    if len(log) == 1:
        return 0.0
    return float(integrate.trapezoid(running, x=np.asarray(log.times)))


def multiplier_release_time(log):
    """
    乘子释放时间

    Returns:
        (t_closest, t_release): 最接近安全边界的时刻, 以及其后 λ 恒为 0 的起始时刻
        (轨迹末尾 λ 仍非零时为 inf)
    """
    s = np.asarray(log.barrier_values)
    lam = np.asarray(log.multiplier_values)
    times = np.asarray(log.times)
    closest = int(np.argmin(s))
    active = np.nonzero(lam[closest:] != 0.0)[0]
    if active.size == 0:
        return float(times[closest]), float(times[closest])
    last = closest + int(active[-1])
    if last + 1 >= len(times):
        return float(times[closest]), np.inf
    return float(times[closest]), float(times[last + 1])


def value_trend_violation(log, kernel_config, weights, fraction=0.2):
    """
    在轨迹末段用终端权值评价 V̂(x(t)) = Ŵᵀσ(x), 返回相邻步最大增量 (<= 0 表示单调不增)
    """
    states = log.states[int(len(log) * (1.0 - fraction)):]
    if len(states) < 2:
        return 0.0
    W = np.asarray(weights, dtype=float)
    values = np.array([W @ kernels(kernel_config, x, x)[0] for x in states])
    return float(np.max(np.diff(values)))


def comparison_configs(config):
    """
    预设对应的对比实验组

    obstacle: u1 / u2 / u3 三种控制器; selftrig: 时间触发、自触发、自触发基线 CBF、自触发不刷新

    Returns:
        {label: ExperimentConfig}
    """
    if config.safety.kind == 'obstacle':
        return {v: replace(config, variant=v, mode='time_triggered')
                for v in ('u1_baseline_cbf', 'u2_rcbf_filter', 'u3_rcbf_embedded')}
    return {
        'time_triggered': replace(config, mode='time_triggered'),
        'self_triggered': replace(config, mode='self_triggered'),
        'self_triggered_baseline_cbf': replace(config, mode='self_triggered',
                                               variant='u1_baseline_cbf'),
        'self_triggered_no_refresh': replace(
            config, mode='self_triggered',
            identifier=replace(config.identifier, refresh=False)),
    }


def compare(configs, n_jobs=1):
    """
    运行一组配置并汇总对比报告

    Args:
        configs: {label: ExperimentConfig}, 需共用 dt 与 horizon
        n_jobs: 并行进程数

    Returns:
        (results, report): results 为 {label: (log, metrics)}, report 为可序列化字典
    """
    labels = list(configs)
    if not labels:
        raise ConfigError("对比实验为空")
    first = configs[labels[0]]
    for label in labels[1:]:
        c = configs[label]
        if c.dt != first.dt or c.horizon != first.horizon:
            raise ConfigError(f"对比实验 '{label}' 的 dt/horizon 与 '{labels[0]}' 不一致")

    outputs = Parallel(n_jobs=n_jobs)(delayed(run)(configs[label]) for label in labels)
    results = dict(zip(labels, outputs))

    report = {'dt': first.dt, 'horizon': first.horizon, 'runs': {}}
    time_counts = [m.trigger_count for label, (_, m) in results.items()
                   if configs[label].mode == 'time_triggered']
    for label, (_, m) in results.items():
        entry = {
            'mode': configs[label].mode,
            'variant': configs[label].variant,
            'cost': m.cost,
            'min_barrier': m.min_barrier,
            'trigger_count': m.trigger_count,
            'min_inter_event': m.min_inter_event,
            'final_theta_error': m.final_theta_error,
            'infeasibility_events': m.infeasibility_events,
        }
        if configs[label].mode == 'self_triggered' and time_counts:
            entry['reduction_factor'] = time_counts[0] / m.trigger_count
        report['runs'][label] = entry
        logger.info(f"[{label}] 代价={m.cost:.4f}, 最小障碍值={m.min_barrier:.4e}, "
                    f"触发次数={m.trigger_count}")

    return results, report


def save_trajectory(log, output_path):
    """以 17 位有效数字写出轨迹 CSV"""
    directory = os.path.dirname(output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    log.to_frame().to_csv(output_path, index=False, float_format='%.17g', lineterminator='\n')
    logger.info(f"轨迹已保存至: {output_path}")
