"""
配置模块
实验配置数据类、YAML 预设加载 (预设 < 用户配置 < 命令行) 与合法性校验
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import yaml

from src.utils import ConfigError, get_logger

logger = get_logger('config')

PRESET_DIR = Path(__file__).resolve().parent.parent / 'configs'

MODES = ('time_triggered', 'self_triggered')
VARIANTS = ('u1_baseline_cbf', 'u2_rcbf_filter', 'u3_rcbf_embedded')
VARIANT_ALIASES = {v.split('_', 1)[0]: v for v in VARIANTS}
TRIGGER_MODES = ('monitor', 'period')
BARRIER_KINDS = ('obstacle', 'half_plane')

# 基准系统状态维数
STATE_DIM = 2


@dataclass
class SafetyConfig:
    """安全集与 RCBF 参数"""
    kind: str = 'obstacle'
    center: Tuple[float, float] = (-0.5, -1.5)
    radius: float = 1.0
    alpha_gain: float = 8.0
    comp_scale: float = 0.2
    relax: float = 1.0


@dataclass
class IdentifierConfig:
    """辨识器参数"""
    theta0: Tuple[float, ...] = (0.0, 0.0, 0.0)
    gamma_theta: float = 100.0
    omega_f_bound: float = 20.0
    refresh: bool = False
    excitation_threshold: float = 0.1


@dataclass
class CriticConfig:
    """评价网络参数"""
    w0: float = 0.1
    gamma0: float = 10.0
    k_c1: float = 0.001
    k_c2: float = 0.001
    beta: float = 0.002
    norm_gain: float = 1.0
    norm_power: int = 1
    n_replay: int = 3
    replay_capacity: int = 2000
    gamma_bounds: Tuple[float, float] = (1e-3, 1e4)
    kernel_scale: float = 0.7


@dataclass
class TriggerConfig:
    """
    触发参数

    l 为空时由 theta_bound, u_max, domain_radius 采样估计
    """
    mu: float = 0.5
    pi: float = 0.5
    d_v: float = 1.0
    p: Tuple[float, ...] = (10.0, 1.0, 5.0, 5.0, 10.0)
    l: Optional[Tuple[float, float, float]] = None
    m_form: str = 'parametric'
    theoretical: dict = field(default_factory=dict)
    theta_bound: float = 2.0
    u_max: float = 20.0
    domain_radius: float = 5.0


BLOCKS = {
    'safety': SafetyConfig,
    'identifier': IdentifierConfig,
    'critic': CriticConfig,
    'trigger': TriggerConfig,
}


@dataclass
class ExperimentConfig:
    """
    一次闭环实验的完整配置

    Attributes:
        preset: 'obstacle', 'selftrig' 或 'custom'
        mode: 'time_triggered' 或 'self_triggered'
        variant: 控制器变体
        dt, horizon: 步长与仿真时长
        x0: 初始状态
        Q, R: 代价权重矩阵
        rng_seed: 随机种子
        trigger_mode: 'monitor' 或 'period'
        strict_feasibility: 约束不可执行时是否终止仿真
        gated_learning: 自触发模式下学习也只在触发时刻进行
    """
    preset: str = 'custom'
    mode: str = 'time_triggered'
    variant: str = 'u3_rcbf_embedded'
    dt: float = 1e-3
    horizon: float = 15.0
    x0: np.ndarray = field(default_factory=lambda: np.array([-2.0, -3.0]))
    Q: np.ndarray = field(default_factory=lambda: np.eye(STATE_DIM))
    R: np.ndarray = field(default_factory=lambda: np.eye(1))
    rng_seed: int = 42
    trigger_mode: str = 'monitor'
    strict_feasibility: bool = False
    gated_learning: bool = False
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    identifier: IdentifierConfig = field(default_factory=IdentifierConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    trigger: TriggerConfig = field(default_factory=TriggerConfig)

    @property
    def n_steps(self):
        """时间网格步数 horizon/dt"""
        return int(round(self.horizon / self.dt))

    def to_dict(self):
        """转换为可序列化字典"""
        data = asdict(self)
        for key in ('x0', 'Q', 'R'):
            data[key] = np.asarray(data[key]).tolist()
        return data


def list_presets():
    """列出 configs/ 下的预设名称"""
    return sorted(p.stem for p in PRESET_DIR.glob('*.yaml'))


def _read_yaml(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"配置文件解析失败 {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是映射: {path}")
    return data


def _known_keys(cls):
    return {f.name for f in fields(cls)}


def _merge(base, update, where='配置'):
    """把 update 合并进 base, 未知键报错"""
    top_keys = _known_keys(ExperimentConfig)
    for key, value in update.items():
        if key in BLOCKS:
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: '{key}' 必须是映射")
            allowed = _known_keys(BLOCKS[key])
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"{where}: '{key}' 中存在未知键 {sorted(unknown)}")
            base.setdefault(key, {}).update(value)
        elif key in top_keys:
            base[key] = value
        else:
            raise ConfigError(f"{where}: 未知键 '{key}'")
    return base


def _apply_overrides(raw, overrides):
    """命令行覆盖项, 支持 'block.key' 形式, 值为 None 的项忽略"""
    nested = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if '.' in key:
            block, sub = key.split('.', 1)
            nested.setdefault(block, {})[sub] = value
        else:
            nested[key] = value
    return _merge(raw, nested, where='命令行参数')


def _as_matrix(value, dim, name):
    M = np.asarray(value, dtype=float)
    if M.ndim == 0:
        M = float(M) * np.eye(dim)
    M = np.atleast_2d(M)
    if M.shape != (dim, dim):
        raise ConfigError(f"{name} 形状错误: {M.shape}, 期望 {(dim, dim)}")
    return M


def _build(raw):
    blocks = {}
    for name, cls in BLOCKS.items():
        values = dict(raw.get(name) or {})
        for key, val in values.items():
            if isinstance(val, list):
                values[key] = tuple(val)
        blocks[name] = cls(**values)

    top = {k: v for k, v in raw.items() if k not in BLOCKS}
    variant = top.get('variant', ExperimentConfig.variant)
    top['variant'] = VARIANT_ALIASES.get(variant, variant)
    if 'x0' in top:
        top['x0'] = np.asarray(top['x0'], dtype=float)
    if 'Q' in top:
        top['Q'] = _as_matrix(top['Q'], STATE_DIM, 'Q')
    if 'R' in top:
        top['R'] = _as_matrix(top['R'], np.atleast_2d(np.asarray(top['R'])).shape[0], 'R')
    try:
        return ExperimentConfig(**top, **blocks)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"配置值非法: {e}")


def load_config(preset=None, config_path=None, overrides=None):
    """
    加载实验配置

    Args:
        preset: 预设名称 (configs/<preset>.yaml)
        config_path: 用户配置文件, 用 'preset:' 指定基础预设
        overrides: 命令行覆盖项字典

    Returns:
        config: 校验后的 ExperimentConfig
    """
    user = {}
    if config_path is not None:
        user = _read_yaml(config_path)
        base = user.pop('preset', None)
        if preset is None:
            preset = base
        elif base is not None and base != preset:
            raise ConfigError(f"预设冲突: 命令行 '{preset}' 与配置文件 '{base}'")

    raw = {}
    if preset is not None and preset != 'custom':
        if preset not in list_presets():
            raise ConfigError(f"未知预设 '{preset}', 可选: {list_presets()}")
        raw = _merge(raw, _read_yaml(PRESET_DIR / f'{preset}.yaml'), where=f'预设 {preset}')
        raw.pop('preset', None)

    raw = _merge(raw, user, where=str(config_path))
    raw = _apply_overrides(raw, overrides or {})
    raw['preset'] = 'custom' if config_path is not None or preset is None else preset

    config = _build(raw)
    validate(config)
    logger.info(f"加载配置: 预设={config.preset}, 模式={config.mode}, 变体={config.variant}, "
                f"dt={config.dt}, 时长={config.horizon}")
    return config


def _check_spd(M, name):
    if not np.allclose(M, M.T):
        raise ConfigError(f"{name} 不对称")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} 不是正定矩阵")


def validate(config):
    """
    校验配置: 枚举值, Q/R 对称正定, dt > 0, horizon 为 dt 整数倍, x0 维数

    Raises:
        ConfigError: 任一检查失败
    """
    if config.mode not in MODES:
        raise ConfigError(f"未知模式 '{config.mode}', 可选: {MODES}")
    if config.variant not in VARIANTS:
        raise ConfigError(f"未知控制器变体 '{config.variant}', 可选: {VARIANTS}")
    if config.trigger_mode not in TRIGGER_MODES:
        raise ConfigError(f"未知触发模式 '{config.trigger_mode}', 可选: {TRIGGER_MODES}")
    if config.safety.kind not in BARRIER_KINDS:
        raise ConfigError(f"未知安全集类型 '{config.safety.kind}', 可选: {BARRIER_KINDS}")

    if not config.dt > 0:
        raise ConfigError(f"dt 必须为正: {config.dt}")
    if config.horizon < 0:
        raise ConfigError(f"horizon 不能为负: {config.horizon}")
    steps = config.horizon / config.dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"horizon={config.horizon} 不是 dt={config.dt} 的整数倍")

    if np.asarray(config.x0).shape != (STATE_DIM,):
        raise ConfigError(f"x0 维数错误: {np.asarray(config.x0).shape}, 期望 ({STATE_DIM},)")
    _check_spd(np.asarray(config.Q, dtype=float), 'Q')
    _check_spd(np.asarray(config.R, dtype=float), 'R')

    if len(config.identifier.theta0) != 3:
        raise ConfigError(f"theta0 维数错误: {len(config.identifier.theta0)}")
    if config.critic.n_replay < 0 or config.critic.replay_capacity < config.critic.n_replay:
        raise ConfigError(f"回放参数非法: n_replay={config.critic.n_replay}, "
                          f"capacity={config.critic.replay_capacity}")
    if config.critic.norm_power not in (1, 2):
        raise ConfigError(f"critic.norm_power 只能为 1 或 2: {config.critic.norm_power}")
    if config.trigger.l is not None and len(config.trigger.l) != 3:
        raise ConfigError(f"安全周期常数需要 3 个: {config.trigger.l}")
    return config
