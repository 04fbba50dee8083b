"""End-to-end runs of the seprank subcommands through main() and handler()."""
import json
from pathlib import Path

import pytest

from seprank.cli import (
    EXIT_CAPABILITY,
    EXIT_OK,
    EXIT_STRICT,
    EXIT_USAGE,
    RunManifest,
    build_parser,
    handler,
    main,
)
from seprank.config import GRID_CAP_ENV
from seprank.errors import InputError

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'


def config(name):
    return str(CONFIGS / f'{name}.json')


@pytest.fixture(autouse=True)
def in_tmp_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


# -- bounds --------------------------------------------------------------------

def test_bounds_small_example(capsys):
    assert main(['bounds', '--L', '1', '--dx', '8', '--r', '1', '--re', '1', '--H', '1']) == EXIT_OK
    out = capsys.readouterr().out
    assert 'upper bound: 1280' in out
    assert 'lower bound: n/a (needs L >= 2)' in out


def test_bounds_json(capsys):
    assert main(['bounds', '--L', '2', '--dx', '64', '--r', '5', '--json']) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report['lower_exact'] == 2
    assert report['assumption_flags']['regime'] == 'large_n'


def test_bounds_degenerate_warning(capsys):
    assert main(['bounds', '--L', '2', '--dx', '8', '--r', '2', '--H', '2']) == EXIT_OK
    assert 'degenerates to 1' in capsys.readouterr().out


def test_bounds_requires_depth(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(['bounds', '--dx', '8', '--r', '1'])
    assert excinfo.value.code == 2


def test_bounds_rejects_non_positive(capsys):
    assert main(['bounds', '--L', '0', '--dx', '8', '--r', '1']) == EXIT_USAGE
    assert '❌' in capsys.readouterr().err


# -- audit ---------------------------------------------------------------------

def test_audit_strict_flags_overhang(capsys):
    assert main(['audit', '--config', config('t5-11b'), '--strict']) == EXIT_STRICT
    assert 'strict audit' in capsys.readouterr().out


def test_audit_strict_clean_config(capsys):
    assert main(['audit', '--config', config('bert-base'), '--strict']) == EXIT_OK


def test_audit_cites_albert_finding(capsys):
    assert main(['audit', '--config', config('albert-xxlarge')]) == EXIT_OK
    assert '25%' in capsys.readouterr().out


def test_audit_schema_error(tmp_path, capsys):
    path = tmp_path / 'broken.json'
    path.write_text(json.dumps({'name': 'x', 'vocab_size': 10, 'width': 8, 'heads': 2}))
    assert main(['audit', '--config', str(path)]) == EXIT_USAGE
    assert '$.depth' in capsys.readouterr().err


def test_audit_from_flags_and_out(tmp_path, capsys):
    out = tmp_path / 'report.json'
    code = main(['audit', '--name', 'flags', '--vocab-size', '30000', '--width', '4096',
                 '--depth', '12', '--heads', '64', '--embedding-rank', '128', '--out', str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report['vocab_bottleneck'] == {'flag': True, 'ratio': 0.03125}
    assert (tmp_path / 'report.json.manifest.json').exists()


def test_audit_override_beats_file(capsys):
    assert main(['audit', '--config', config('t5-11b'), '--heads', '8', '--strict', '--json']) == EXIT_OK
    assert json.loads(capsys.readouterr().out)['attention_overhang']['flag'] is False


def test_audit_compare(capsys):
    assert main(['audit', '--config', config('t5-3b'), '--compare', config('t5-11b')]) == EXIT_OK
    assert 'larger lower-bound scale' in capsys.readouterr().out


# -- grid and sweep ------------------------------------------------------------------

GRID_ARGS = ['grid', '--L', '2', '--dx', '4', '--r', '4', '--N', '4', '--Z', '4', '--seed', '1']


def test_grid_sandwich(capsys):
    assert main(GRID_ARGS) == EXIT_OK
    out = capsys.readouterr().out
    assert 'empirical rank:' in out
    assert '✅ sandwich holds' in out


def test_grid_is_deterministic(capsys):
    main(GRID_ARGS)
    first = capsys.readouterr().out
    main(GRID_ARGS)
    assert capsys.readouterr().out == first


def test_grid_cap_exit_code(monkeypatch, capsys):
    monkeypatch.setenv(GRID_CAP_ENV, '10')
    assert main(GRID_ARGS) == EXIT_CAPABILITY
    assert 'SEPRANK_GRID_CAP' in capsys.readouterr().err


def test_grid_writes_row(tmp_path, capsys):
    out = tmp_path / 'grid.csv'
    assert main(GRID_ARGS + ['--out', str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 2


def test_sweep_manifest_and_replay(tmp_path, capsys):
    out = tmp_path / 'sweep.csv'
    assert main(['sweep', '--param', 'r', '--values', '1,2,3,4', '--seeds', '3', '--out', str(out)]) == EXIT_OK
    first = out.read_bytes()
    assert len(first.decode().splitlines()) == 13

    manifest_path = tmp_path / 'sweep.csv.manifest.json'
    manifest = RunManifest.load(manifest_path)
    assert manifest.subcommand == 'sweep'
    assert manifest.flags['values'] == [1, 2, 3, 4]
    assert manifest.outputs == [str(out)]

    out.unlink()
    assert main(['replay', str(manifest_path)]) == EXIT_OK
    assert out.read_bytes() == first


def test_sweep_over_width(tmp_path, capsys):
    out = tmp_path / 'dx.csv'
    assert main(['sweep', '--param', 'dx', '--values', '4,5', '--seeds', '1', '--r', '3',
                 '--out', str(out)]) == EXIT_OK
    rows = out.read_text().splitlines()[1:]
    assert [row.split(',')[4] for row in rows] == ['4', '5']


def test_replay_missing_manifest(tmp_path, capsys):
    assert main(['replay', str(tmp_path / 'nope.json')]) == EXIT_USAGE


@pytest.mark.parametrize('tool, argv', [
    ('bounds', ['bounds', '--L', '2', '--dx', '8', '--r', '4']),
    ('audit', ['audit', '--config', config('bert-base')]),
    ('grid', GRID_ARGS),
    ('witness', ['witness', '--mode', 'hadamard', '--d', '1', '--lambda', '1']),
])
def test_every_run_writes_a_manifest(tool, argv, tmp_path, capsys):
    assert main(argv) == EXIT_OK
    manifest = RunManifest.load(tmp_path / f'seprank-{tool}.manifest.json')
    assert manifest.subcommand == tool
    assert manifest.outputs == []


def test_explicit_manifest_path(tmp_path, capsys):
    target = tmp_path / 'runs' / 'b.json'
    target.parent.mkdir()
    assert main(['bounds', '--L', '2', '--dx', '8', '--r', '4', '--manifest', str(target)]) == EXIT_OK
    assert RunManifest.load(target).flags['L'] == 2
    assert not (tmp_path / 'seprank-bounds.manifest.json').exists()


def test_replay_of_default_manifest(capsys):
    assert main(['bounds', '--L', '2', '--dx', '64', '--r', '5']) == EXIT_OK
    first = capsys.readouterr().out
    assert main(['replay', 'seprank-bounds.manifest.json']) == EXIT_OK
    assert capsys.readouterr().out == first


def test_replay_rejects_unknown_manifest_keys(tmp_path, capsys):
    path = tmp_path / 'extra.json'
    path.write_text(json.dumps({
        'subcommand': 'bounds', 'flags': {'L': 2, 'dx': 8, 'r': 4}, 'host': 'box',
    }))
    assert main(['replay', str(path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert '❌' in err
    assert 'host' in err


def test_replay_refuses_to_replay_a_replay(tmp_path, capsys):
    path = tmp_path / 'loop.json'
    path.write_text(json.dumps({'subcommand': 'replay', 'flags': {'manifest_path': str(path)}}))
    assert main(['replay', str(path)]) == EXIT_USAGE
    assert 'records a replay' in capsys.readouterr().err


@pytest.mark.parametrize('document', ['[1, 2]', '{"subcommand": "bounds", "flags": [1]}'])
def test_replay_rejects_malformed_manifest(document, tmp_path, capsys):
    path = tmp_path / 'bad.json'
    path.write_text(document)
    assert main(['replay', str(path)]) == EXIT_USAGE
    assert '❌' in capsys.readouterr().err


# -- witness --------------------------------------------------------------------------

def test_witness_hadamard(capsys):
    assert main(['witness', '--mode', 'hadamard', '--d', '2', '--lambda', '2']) == EXIT_OK
    out = capsys.readouterr().out
    assert '✅ hadamard power has full rank (exact)' in out


@pytest.mark.parametrize('mode', ['vocab', 'conv', 'largeN'])
def test_witness_constructions_verify(mode, capsys):
    assert main(['witness', '--mode', mode, '--d', '2']) == EXIT_OK
    assert '❌' not in capsys.readouterr().out


def test_witness_conv_wide_kernel(capsys):
    assert main(['witness', '--mode', 'conv', '--d', '1', '--k', '2']) == EXIT_OK


def test_witness_large_n_too_short(capsys):
    assert main(['witness', '--mode', 'largeN', '--d', '2', '--N', '2']) == EXIT_USAGE
    assert 'need N >=' in capsys.readouterr().err


def test_witness_lambda_must_be_power_of_three(capsys):
    assert main(['witness', '--mode', 'vocab', '--d', '2', '--lambda', '2']) == EXIT_USAGE
    assert 'power of 3' in capsys.readouterr().err


# -- dispatcher and parser -----------------------------------------------------------------

def test_handler_unknown_tool():
    with pytest.raises(InputError, match='Unknown tool'):
        handler({'tool': 'train', 'parameters': {}})


def test_handler_missing_parameter():
    with pytest.raises(InputError, match='Missing required parameter: dx'):
        handler({'tool': 'bounds', 'parameters': {'L': 2}})


def test_handler_unknown_parameter():
    with pytest.raises(InputError, match='Unknown parameter'):
        handler({'tool': 'bounds', 'parameters': {'L': 2, 'dx': 4, 'r': 2, 'depth': 3}})


def test_handler_matches_cli(capsys):
    assert handler({'tool': 'bounds', 'parameters': {'L': 1, 'dx': 8, 'r': 1}}) == EXIT_OK
    via_handler = capsys.readouterr().out
    main(['bounds', '--L', '1', '--dx', '8', '--r', '1'])
    assert capsys.readouterr().out == via_handler


def test_help_shows_units_and_defaults(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(['grid', '--help'])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    assert '[layers]' in out
    assert '[templates]' in out
    assert 'default:' in out


def test_every_tool_has_a_parser():
    parser = build_parser()
    for tool in ('bounds', 'audit', 'grid', 'sweep', 'witness', 'replay'):
        with pytest.raises(SystemExit):
            parser.parse_args([tool, '--help'])
