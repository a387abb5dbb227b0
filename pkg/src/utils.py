"""
工具函数模块
整合日志、异常类型与结果保存
"""

import os
import json
import logging
from datetime import datetime

import numpy as np


LOGGER_NAME = 'safe_critic'


class SafeCriticError(Exception):
    """仿真库异常基类"""

    def __init__(self, message, step_index=None):
        self.message = message
        self.step_index = step_index
        if step_index is not None:
            message = f"{message} (步数: {step_index})"
        super().__init__(message)

    def at_step(self, step_index):
        """返回附带步数的同类型异常 (已有步数时原样返回)"""
        if self.step_index is not None:
            return self
        return type(self)(self.message, step_index=step_index)


class NumericDomainError(SafeCriticError):
    """数值超出有效域 (非有限值、指数溢出)"""


class DivergenceError(SafeCriticError):
    """状态发散"""


class ParameterDomainError(SafeCriticError):
    """参数不满足设计约束"""


class InfeasibleConstraintError(SafeCriticError):
    """安全约束在当前状态下不可执行"""


class SafetyViolationError(SafeCriticError):
    """采样状态已离开安全集"""


class InternalConsistencyError(SafeCriticError):
    """内部不变量被破坏"""


class ConfigError(SafeCriticError):
    """配置错误"""


def setup_logger(name=LOGGER_NAME, log_dir='experiments/logs', level=logging.INFO):
    """
    设置日志记录器

    Args:
        name: 日志器名称
        log_dir: 日志目录 (None 表示只输出到控制台)
        level: 日志级别

    Returns:
        logger: 配置好的日志器
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)

    # 重新配置时替换旧处理器, 日志写入本次的输出目录
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f'run_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log')
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    return logger


def get_logger(module):
    """获取挂在主日志器下的模块日志器"""
    return logging.getLogger(f'{LOGGER_NAME}.{module}')


def to_serializable(value):
    """把 numpy 类型递归转换为 json 可序列化的 Python 类型"""
    if isinstance(value, dict):
        return {str(k): to_serializable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_serializable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_serializable(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # 非有限值在 json 中没有合法表示
        return value if np.isfinite(value) else None
    return value


def save_results(results, output_path):
    """
    保存结果字典为 json

    Args:
        results: 结果字典
        output_path: 输出文件路径
    """
    directory = os.path.dirname(output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(output_path, 'w', encoding='utf-8') as f:
        json.dump(to_serializable(results), f, indent=2, ensure_ascii=False)

    get_logger('utils').info(f"结果已保存至: {output_path}")
