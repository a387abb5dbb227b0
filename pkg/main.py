#!/usr/bin/env python3
"""
自适应安全嵌入评价学习仿真 - 主程序入口
支持单次运行 (run) 与控制器/触发方式对比 (compare)
"""

import argparse
import os
import sys

from src.config import MODES, TRIGGER_MODES, VARIANT_ALIASES, VARIANTS, list_presets, load_config
from src.sim import comparison_configs, compare, run, save_trajectory
from src.utils import (ConfigError, DivergenceError, InfeasibleConstraintError,
                       InternalConsistencyError, NumericDomainError, ParameterDomainError,
                       SafetyViolationError, save_results, setup_logger)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_SAFETY = 4


def build_parser():
    """构造命令行解析器"""
    parser = argparse.ArgumentParser(description='自适应安全嵌入评价学习仿真')
    subparsers = parser.add_subparsers(dest='command', required=True)

    for name, text in (('run', '运行单次实验'), ('compare', '对比控制器变体与触发方式')):
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument('preset', nargs='?', help=f'预设名称 ({", ".join(list_presets())})')
        sub.add_argument('--preset', dest='preset_flag', help='预设名称 (与位置参数等价)')
        sub.add_argument('--config', type=str, help='YAML 配置文件路径')
        sub.add_argument('--variant', choices=sorted(VARIANT_ALIASES) + list(VARIANTS),
                         help='控制器变体')
        sub.add_argument('--mode', choices=MODES, help='触发方式')
        sub.add_argument('--dt', type=float, help='步长')
        sub.add_argument('--horizon', type=float, help='仿真时长')
        sub.add_argument('--seed', type=int, help='随机种子 (预设默认 42)')
        sub.add_argument('--out-dir', type=str, default='experiments/results',
                         help='输出目录路径')
        sub.add_argument('--trigger-mode', choices=TRIGGER_MODES, help='自触发实现方式')
        sub.add_argument('--refresh', choices=['on', 'off'], help='辨识器刷新机制')
        if name == 'compare':
            sub.add_argument('--jobs', type=int, default=1, help='并行进程数')

    return parser


def resolve_config(args):
    """合并预设、配置文件与命令行参数"""
    if args.preset and args.preset_flag and args.preset != args.preset_flag:
        raise ConfigError(f"预设参数冲突: '{args.preset}' 与 '{args.preset_flag}'")
    preset = args.preset or args.preset_flag
    if preset is None and args.config is None:
        raise ConfigError("需要指定预设或 --config")
    if args.horizon is not None and args.horizon <= 0:
        raise ConfigError(f"--horizon 必须为正, 否则轨迹为空: {args.horizon}")

    overrides = {
        'variant': args.variant,
        'mode': args.mode,
        'dt': args.dt,
        'horizon': args.horizon,
        'rng_seed': args.seed,
        'trigger_mode': args.trigger_mode,
        'identifier.refresh': None if args.refresh is None else args.refresh == 'on',
    }
    return load_config(preset, args.config, overrides)


def cmd_run(args, logger):
    """单次运行, 输出 trajectory.csv 与 metrics.json"""
    config = resolve_config(args)
    log, metrics = run(config)

    os.makedirs(args.out_dir, exist_ok=True)
    save_trajectory(log, os.path.join(args.out_dir, 'trajectory.csv'))
    save_results(metrics.to_dict(), os.path.join(args.out_dir, 'metrics.json'))
    save_results(config.to_dict(), os.path.join(args.out_dir, 'config.json'))

    logger.info(f"运行完成 - 代价: {metrics.cost:.4f}, 触发次数: {metrics.trigger_count}")
    return EXIT_OK


def cmd_compare(args, logger):
    """对比实验, 每个实验输出一个 CSV, 汇总写入 comparison.json"""
    config = resolve_config(args)
    configs = comparison_configs(config)
    results, report = compare(configs, n_jobs=args.jobs)

    os.makedirs(args.out_dir, exist_ok=True)
    for label, (log, _) in results.items():
        save_trajectory(log, os.path.join(args.out_dir, f'{label}.csv'))
    save_results(report, os.path.join(args.out_dir, 'comparison.json'))

    logger.info(f"对比完成 - 共 {len(results)} 组实验")
    return EXIT_OK


def exit_code(error):
    """异常类型到退出码的映射"""
    if isinstance(error, (ConfigError, ParameterDomainError)):
        return EXIT_USAGE
    if isinstance(error, (DivergenceError, NumericDomainError, InternalConsistencyError)):
        return EXIT_DIVERGENCE
    if isinstance(error, (InfeasibleConstraintError, SafetyViolationError)):
        return EXIT_SAFETY
    return EXIT_ERROR


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logger = setup_logger(log_dir=os.path.join(args.out_dir, 'logs'))
    logger.info(f"启动命令: {args.command}")

    try:
        if args.command == 'run':
            return cmd_run(args, logger)
        return cmd_compare(args, logger)
    except Exception as e:
        logger.error(f"程序执行出错: {e}")
        return exit_code(e)


if __name__ == '__main__':
    sys.exit(main())
