import json
import os

import pandas as pd
import pytest
import yaml

from main import build_parser, exit_code, main
from src.utils import (ConfigError, DivergenceError, InfeasibleConstraintError,
                       NumericDomainError, SafetyViolationError)


@pytest.fixture
def small_config(tmp_path):
    """基于 obstacle 预设、初值靠近原点的配置文件"""
    path = tmp_path / 'small.yaml'
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump({'preset': 'obstacle', 'x0': [0.3, -0.4]}, f)
    return str(path)


def test_run_writes_outputs(tmp_path, small_config):
    out = tmp_path / 'run'
    code = main(['run', '--config', small_config, '--horizon', '0.02', '--out-dir', str(out)])
    assert code == 0
    for name in ('trajectory.csv', 'metrics.json', 'config.json'):
        assert (out / name).is_file()

    df = pd.read_csv(out / 'trajectory.csv')
    assert list(df.columns) == ['t', 'x1', 'x2', 'u1', 's', 'lambda', 'theta1', 'theta2',
                                'theta3', 'W1', 'W2', 'W3', 'triggered']
    assert len(df) == 21

    with open(out / 'metrics.json', encoding='utf-8') as f:
        metrics = json.load(f)
    assert metrics['trigger_count'] == 20

    with open(out / 'config.json', encoding='utf-8') as f:
        config = json.load(f)
    assert config['preset'] == 'custom'
    assert config['horizon'] == pytest.approx(0.02)


def test_run_output_is_byte_identical(tmp_path, small_config):
    paths = []
    for name in ('a', 'b'):
        out = tmp_path / name
        assert main(['run', '--config', small_config, '--horizon', '0.01',
                     '--out-dir', str(out)]) == 0
        paths.append(out / 'trajectory.csv')
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_zero_horizon_is_usage_error(tmp_path):
    assert main(['run', 'obstacle', '--horizon', '0', '--out-dir', str(tmp_path)]) == 2


def test_unknown_preset_is_usage_error(tmp_path):
    assert main(['run', 'nowhere', '--out-dir', str(tmp_path)]) == 2


def test_missing_preset_is_usage_error(tmp_path):
    assert main(['run', '--out-dir', str(tmp_path)]) == 2


def test_conflicting_preset_flags(tmp_path):
    code = main(['run', 'obstacle', '--preset', 'selftrig', '--out-dir', str(tmp_path)])
    assert code == 2


def test_bad_argument_is_usage_error(tmp_path):
    assert main(['run', 'obstacle', '--variant', 'u9', '--out-dir', str(tmp_path)]) == 2


def test_compare_writes_report(tmp_path, small_config):
    out = tmp_path / 'compare'
    code = main(['compare', '--config', small_config, '--horizon', '0.01',
                 '--out-dir', str(out)])
    assert code == 0
    for label in ('u1_baseline_cbf', 'u2_rcbf_filter', 'u3_rcbf_embedded'):
        assert (out / f'{label}.csv').is_file()
    with open(out / 'comparison.json', encoding='utf-8') as f:
        report = json.load(f)
    assert set(report['runs']) == {'u1_baseline_cbf', 'u2_rcbf_filter', 'u3_rcbf_embedded'}
    assert all(r['trigger_count'] == 10 for r in report['runs'].values())


def test_parser_accepts_aliases():
    args = build_parser().parse_args(['run', 'selftrig', '--variant', 'u2', '--refresh', 'off'])
    assert args.preset == 'selftrig'
    assert args.variant == 'u2'
    assert args.refresh == 'off'


@pytest.mark.parametrize('error, code', [
    (ConfigError('x'), 2),
    (DivergenceError('x'), 3),
    (NumericDomainError('x'), 3),
    (InfeasibleConstraintError('x'), 4),
    (SafetyViolationError('x'), 4),
    (RuntimeError('x'), 1),
])
def test_exit_codes(error, code):
    assert exit_code(error) == code


def test_log_file_is_written(tmp_path, small_config):
    out = tmp_path / 'logs_run'
    main(['run', '--config', small_config, '--horizon', '0.01', '--out-dir', str(out)])
    assert os.listdir(out / 'logs')


def test_outputs_pass_checker(tmp_path, small_config):
    from scripts.check_outputs import check_output_dir

    run_dir = tmp_path / 'checked_run'
    main(['run', '--config', small_config, '--horizon', '0.01', '--out-dir', str(run_dir)])
    assert check_output_dir(str(run_dir))

    compare_dir = tmp_path / 'checked_compare'
    main(['compare', '--config', small_config, '--horizon', '0.01', '--out-dir', str(compare_dir)])
    assert check_output_dir(str(compare_dir))
    assert not check_output_dir(str(tmp_path / 'empty'))


def test_reproduce_script_stops_on_failed_check():
    path = os.path.join(os.path.dirname(__file__), '..', 'scripts', 'reproduce.sh')
    with open(path, encoding='utf-8') as f:
        lines = [line.strip() for line in f if line.strip()]
    checks = [i for i, line in enumerate(lines)
              if line.startswith('python scripts/check_outputs.py')]
    assert len(checks) == 2
    for i in checks:
        assert lines[i + 1] == 'if [ $? -ne 0 ]; then'
        assert 'exit 1' in lines[i + 2:i + 4]
