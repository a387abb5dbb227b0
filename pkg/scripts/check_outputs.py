#!/usr/bin/env python3
"""
仿真输出检查脚本
验证轨迹 CSV 的列、时间网格、有限性, 以及 metrics.json / comparison.json 的内容
"""

import argparse
import glob
import json
import os
import sys

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# 与 TrajectoryLog.to_frame 一致的基准系统列
EXPECTED_COLUMNS = ['t', 'x1', 'x2', 'u1', 's', 'lambda', 'theta1', 'theta2', 'theta3',
                    'W1', 'W2', 'W3', 'triggered']

SAFETY_TOL = 1e-6


def check_trajectory(csv_path):
    """
    检查单条轨迹

    Returns:
        problems: 问题描述列表 (空表示通过)
    """
    problems = []
    df = pd.read_csv(csv_path)
    print(f"检查轨迹: {csv_path} ({len(df)} 行)")

    if list(df.columns) != EXPECTED_COLUMNS:
        problems.append(f"列不一致: {list(df.columns)}")
        return problems
    if df.empty:
        problems.append("轨迹为空")
        return problems

    values = df.drop(columns='triggered').to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        problems.append("存在非有限值")

    dt = np.diff(df['t'].to_numpy())
    if dt.size and (np.any(dt <= 0) or np.ptp(dt) > 1e-9 * max(dt.max(), 1.0)):
        problems.append("时间网格不均匀或不递增")

    if (df['lambda'] < 0).any():
        problems.append("乘子出现负值")
    if not set(df['triggered'].unique()) <= {0, 1}:
        problems.append("triggered 列不是 0/1")
    if df['triggered'].iloc[0] != 1:
        problems.append("t=0 未触发")

    min_s = df['s'].min()
    print(f"  最小障碍值: {min_s:.3e}, 触发次数: {int(df['triggered'].sum())}")
    if min_s < -SAFETY_TOL:
        # 基线 CBF 允许越界, 只提示
        print(f"  注意: 轨迹离开安全集 (min s = {min_s:.3e})")
    return problems


def check_metrics(json_path, df):
    """核对 metrics.json 与轨迹一致"""
    problems = []
    with open(json_path, 'r', encoding='utf-8') as f:
        metrics = json.load(f)
    if metrics['trigger_count'] != int(df['triggered'].sum()):
        problems.append(f"trigger_count={metrics['trigger_count']} 与轨迹不符")
    if not np.isclose(metrics['min_barrier'], df['s'].min(), rtol=1e-12, atol=0.0):
        problems.append("min_barrier 与轨迹不符")
    if metrics['cost'] < 0:
        problems.append("代价为负")
    return problems


def check_output_dir(out_dir):
    """
    检查一个输出目录 (run 或 compare 的结果)

    Returns:
        success: 是否通过
    """
    print(f"检查输出目录: {out_dir}")
    print("=" * 50)
    csv_files = sorted(glob.glob(os.path.join(out_dir, '*.csv')))
    if not csv_files:
        print(f"错误: 未找到轨迹文件: {out_dir}")
        return False

    problems = {}
    for csv_path in csv_files:
        found = check_trajectory(csv_path)
        metrics_path = os.path.join(out_dir, 'metrics.json')
        if not found and os.path.basename(csv_path) == 'trajectory.csv' \
                and os.path.exists(metrics_path):
            found = check_metrics(metrics_path, pd.read_csv(csv_path))
        if found:
            problems[csv_path] = found

    report_path = os.path.join(out_dir, 'comparison.json')
    if os.path.exists(report_path):
        with open(report_path, 'r', encoding='utf-8') as f:
            report = json.load(f)
        labels = {os.path.splitext(os.path.basename(p))[0] for p in csv_files}
        missing = set(report['runs']) - labels
        if missing:
            problems[report_path] = [f"缺少轨迹文件: {sorted(missing)}"]
        for label, entry in report['runs'].items():
            if 'reduction_factor' in entry:
                print(f"  {label}: 采样减少 {entry['reduction_factor']:.1f} 倍")

    print("\n检查总结:")
    print("-" * 30)
    if not problems:
        print("✅ 输出检查通过!")
        return True
    print("❌ 输出存在问题:")
    for path, found in problems.items():
        for p in found:
            print(f"  - {os.path.basename(path)}: {p}")
    return False


def main():
    parser = argparse.ArgumentParser(description='仿真输出检查工具')
    parser.add_argument('--out_dir', required=True, help='run/compare 的输出目录')

    args = parser.parse_args()

    success = check_output_dir(args.out_dir)

    # 退出码: 0 表示成功, 1 表示失败
    sys.exit(0 if success else 1)


if __name__ == '__main__':
    main()
