"""
Command-line front end.

Subcommands are declared once in TOOLS (name, description, parameter table)
and both the argparse parsers and the ``handler(event)`` dispatcher are built
from it, so ``python -m seprank grid --L 2 ...`` and
``handler({'tool': 'grid', 'parameters': {'L': 2, ...}})`` run the same code.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

from seprank import __version__
from seprank.audit import compare as compare_configs, diagnose, load_config, read_document
from seprank.bounds import BoundInputs, bound_report
from seprank.config import GRID_RANK_TOL, configure_logging
from seprank.errors import CapabilityError, InputError, SearchExhausted
from seprank.septensor import SweepSpec, rank_sweep, sweep_point, sweep_row, write_sweep_csv
from seprank.witness import (
    build_conv_witness,
    build_largeN_witness,
    build_vocab_witness,
    search_hadamard_witness,
    verify_hadamard_rank,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STRICT = 3
EXIT_CAPABILITY = 4
EXIT_VERIFY_FAILED = 5
EXIT_SEARCH_EXHAUSTED = 6

DEFAULT_MANIFEST = 'seprank-{tool}.manifest.json'

_NETWORK_PARAMETERS = {
    "L": {"type": "integer", "required": True, "units": "layers", "help": "depth"},
    "dx": {"type": "integer", "required": True, "units": "dims", "help": "embedding width d_x"},
    "r": {"type": "integer", "required": True, "units": "rank", "help": "vocabulary embedding rank"},
    "H": {"type": "integer", "default": 1, "units": "heads", "help": "attention heads per layer"},
    "da": {"type": "integer", "default": 3, "units": "dims", "help": "per-head attention dimension d_a"},
    "N": {"type": "integer", "default": 4, "units": "positions", "help": "sequence length (even)"},
    "Z": {"type": "integer", "default": 4, "units": "templates", "help": "template tokens per position"},
    "V": {"type": "integer", "units": "tokens", "help": "vocabulary size (default max(Z, dx, r))"},
    "re": {"type": "integer", "default": 0, "units": "rank", "help": "positional embedding rank (0 = none)"},
    "position": {"type": "integer", "default": 0, "units": "index", "help": "output position i, 0-based"},
    "coordinate": {"type": "integer", "default": 0, "units": "index", "help": "output coordinate p, 0-based"},
    "tol": {"type": "number", "default": GRID_RANK_TOL, "units": "relative", "help": "rank cutoff as a fraction of sigma_max"},
    "partition": {"type": "string", "units": "layout", "help": "'interleaved' (default), 'halves' or '0,2|1,3'"},
    "workers": {"type": "integer", "default": 1, "units": "threads", "help": "grid evaluation threads"},
}

# base point of a sweep for the otherwise required network flags
_SWEEP_BASE = {"L": 2, "dx": 4, "r": 4}

TOOLS = [
    {
        "name": "bounds",
        "description": "Exact and log-space separation-rank bounds with assumption flags.",
        "parameters": {
            "L": {"type": "integer", "required": True, "units": "layers", "help": "depth"},
            "dx": {"type": "integer", "required": True, "units": "dims", "help": "embedding width d_x"},
            "r": {"type": "integer", "required": True, "units": "rank", "help": "embedding rank"},
            "re": {"type": "integer", "default": 1, "units": "rank", "help": "positional embedding rank"},
            "H": {"type": "integer", "default": 1, "units": "heads", "help": "attention heads per layer"},
            "V": {"type": "integer", "units": "tokens", "help": "vocabulary size (omit for the large-N regime)"},
            "N": {"type": "integer", "units": "positions", "help": "sequence length"},
            "as_json": {"type": "boolean", "default": False, "flag": "--json", "units": "flag", "help": "print the report as JSON"},
        },
    },
    {
        "name": "audit",
        "description": "Diagnose embedding-rank and attention-overhang bottlenecks of a model config.",
        "parameters": {
            "config": {"type": "string", "units": "path", "help": "JSON config file"},
            "name": {"type": "string", "units": "text", "help": "override: model name"},
            "vocab_size": {"type": "integer", "units": "tokens", "help": "override: V"},
            "width": {"type": "integer", "units": "dims", "help": "override: d_x"},
            "depth": {"type": "integer", "units": "layers", "help": "override: L"},
            "heads": {"type": "integer", "units": "heads", "help": "override: H"},
            "embedding_rank": {"type": "integer", "units": "rank", "help": "override: r"},
            "attention_dim": {"type": "integer", "units": "dims", "help": "override: d_a"},
            "positional_rank": {"type": "integer", "units": "rank", "help": "override: r_e"},
            "seq_len": {"type": "integer", "units": "positions", "help": "override: N"},
            "compare": {"type": "string", "units": "path", "help": "second config for a side-by-side report"},
            "strict": {"type": "boolean", "default": False, "units": "flag", "help": "exit 3 when any bottleneck is flagged"},
            "as_json": {"type": "boolean", "default": False, "flag": "--json", "units": "flag", "help": "print the report as JSON"},
            "out": {"type": "string", "units": "path", "help": "write the JSON report here"},
        },
    },
    {
        "name": "grid",
        "description": "Empirical separation-rank lower bound of a random network, against the analytic bounds.",
        "parameters": dict(_NETWORK_PARAMETERS, **{
            "seed": {"type": "integer", "default": 0, "units": "seed", "help": "random seed"},
            "out": {"type": "string", "units": "path", "help": "write the result row as CSV"},
        }),
    },
    {
        "name": "sweep",
        "description": "Empirical rank over one swept parameter and several seeds, written as CSV.",
        "parameters": dict(
            {
                "param": {"type": "string", "required": True, "choices": ["r", "L", "dx", "Z", "N"], "units": "name", "help": "swept parameter"},
                "values": {"type": "integer_list", "required": True, "units": "list", "help": "comma-separated values"},
                "seeds": {"type": "integer", "default": 3, "units": "count", "help": "seeds per value"},
                "seed_start": {"type": "integer", "default": 0, "units": "seed", "help": "first seed"},
                "out": {"type": "string", "required": True, "units": "path", "help": "CSV output file"},
            },
            **{
                key: dict(spec, required=False, default=_SWEEP_BASE.get(key, spec.get("default")))
                for key, spec in _NETWORK_PARAMETERS.items()
            },
        ),
    },
    {
        "name": "witness",
        "description": "Build and verify a lower-bound witness assignment or a Hadamard-power witness.",
        "parameters": {
            "mode": {"type": "string", "required": True, "choices": ["vocab", "conv", "largeN", "hadamard"], "units": "name", "help": "construction"},
            "d": {"type": "integer", "default": 1, "units": "count", "help": "witness columns d"},
            "lam": {"type": "integer", "default": 1, "flag": "--lambda", "units": "power", "help": "Hadamard power; 3^(L-2) for the constructions"},
            "da": {"type": "integer", "default": 3, "units": "dims", "help": "attention dimension d_a (odd)"},
            "H": {"type": "integer", "default": 1, "units": "heads", "help": "attention heads"},
            "r": {"type": "integer", "units": "rank", "help": "embedding rank (default derived from d and H)"},
            "dx": {"type": "integer", "units": "dims", "help": "width (default r)"},
            "N": {"type": "integer", "units": "positions", "help": "sequence length (largeN: default minimal)"},
            "k": {"type": "integer", "default": 1, "units": "inputs", "help": "conv kernel width M/N"},
            "d_input": {"type": "integer", "units": "dims", "help": "conv input dimension (default ceil(dx/k))"},
            "seed": {"type": "integer", "default": 0, "units": "seed", "help": "random seed"},
            "max_trials": {"type": "integer", "default": 10_000, "units": "trials", "help": "Hadamard search budget"},
        },
    },
    {
        "name": "replay",
        "description": "Re-run a recorded invocation from its manifest.",
        "parameters": {
            "manifest_path": {"type": "string", "required": True, "positional": True, "units": "path", "help": "manifest JSON file"},
        },
    },
]

TOOLS_BY_NAME = {tool["name"]: tool for tool in TOOLS}


@dataclass
class RunManifest:
    subcommand: str
    flags: dict
    seed: object = None
    tolerance: object = None
    outputs: list = field(default_factory=list)
    version: str = __version__

    def save(self, path):
        with open(path, 'w') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    @classmethod
    def load(cls, path):
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read manifest {path}: {exc}")
        if not isinstance(data, dict):
            raise InputError(f"manifest {path} must hold a JSON object")
        missing = {'subcommand', 'flags'} - set(data)
        if missing:
            raise InputError(f"manifest {path} lacks {sorted(missing)}")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise InputError(f"manifest {path} has unknown keys {sorted(unknown)}")
        if not isinstance(data['flags'], dict):
            raise InputError(f"manifest {path}: flags must be an object")
        return cls(**data)


def banner(title):
    print('=' * 80)
    print(title)
    print('=' * 80)


def _int_list(text):
    try:
        return [int(part) for part in str(text).split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


_ARG_TYPES = {'integer': int, 'number': float, 'string': str, 'integer_list': _int_list}


def _help_text(spec):
    default = spec.get('default')
    return f"{spec['help']} [{spec['units']}] (default: {default})"


def build_parser():
    parser = argparse.ArgumentParser(
        prog='seprank', description='Separation-rank analysis of self-attention networks.',
        allow_abbrev=False,
    )
    parser.add_argument('--version', action='version', version=f'seprank {__version__}')
    sub = parser.add_subparsers(dest='tool', required=True)
    for tool in TOOLS:
        p = sub.add_parser(tool['name'], help=tool['description'], description=tool['description'],
                           allow_abbrev=False)
        for name, spec in tool['parameters'].items():
            if spec.get('positional'):
                p.add_argument(name, help=_help_text(spec))
                continue
            flag = spec.get('flag', '--' + name.replace('_', '-'))
            if spec['type'] == 'boolean':
                p.add_argument(flag, dest=name, action='store_true', help=_help_text(spec))
                continue
            p.add_argument(
                flag, dest=name, type=_ARG_TYPES[spec['type']], required=spec.get('required', False),
                default=spec.get('default'), choices=spec.get('choices'), help=_help_text(spec),
            )
        if tool['name'] != 'replay':
            p.add_argument('--manifest', help='write the run manifest here '
                           '[path] (default: <out>.manifest.json, else seprank-<tool>.manifest.json)')
    return parser


def _with_defaults(tool, params):
    """Fill missing parameters from the TOOLS table; reject unknown or missing required ones."""
    table = tool['parameters']
    unknown = sorted(set(params) - set(table))
    if unknown:
        raise InputError(f"Unknown parameter(s) for {tool['name']}: {', '.join(unknown)}")
    resolved = {}
    for name, spec in table.items():
        if params.get(name) is not None:
            resolved[name] = params[name]
        elif spec.get('required'):
            raise InputError(f"Missing required parameter: {name}")
        else:
            resolved[name] = spec.get('default')
    return resolved


def _fmt_log(value):
    return 'n/a' if value is None else f"{value:.6f}"


def cmd_bounds(L, dx, r, re=1, H=1, V=None, N=None, as_json=False):
    report = bound_report(BoundInputs(L=L, d_x=dx, r=r, r_e=re, H=H, V=V, N=N))
    if as_json:
        print(_json_dump(report.to_dict()))
        return EXIT_OK
    banner('SEPARATION-RANK BOUNDS')
    print(f"inputs: L={L} d_x={dx} r={r} (effective {report.inputs.effective_rank}) r_e={re} H={H}"
          + (f" V={V}" if V is not None else '') + (f" N={N}" if N is not None else ''))
    upper = report.upper_exact if report.upper_exact is not None else 'not representable (> 4096 bits)'
    print(f"upper bound: {upper}")
    print(f"  ln = {_fmt_log(report.upper_log)}  log2 = {_fmt_log(report.upper_log2)}")
    if report.lower_available:
        lower = report.lower_exact if report.lower_exact is not None else 'not representable (> 4096 bits)'
        print(f"lower bound: {lower}")
        print(f"  ln = {_fmt_log(report.lower_log)}  log2 = {_fmt_log(report.lower_log2)}")
        flags = report.flags
        print(f"flags: depth_ok={flags.depth_ok} heads_ok={flags.heads_ok} "
              f"vocab_ok={flags.vocab_ok} regime={flags.regime}")
        if not flags.heads_ok:
            print("⚠️  H >= r: lower bound degenerates to 1")
    else:
        print("lower bound: n/a (needs L >= 2)")
    print(f"scales: upper L*min(r,d_x) = {report.scales.upper}, "
          f"lower L*(min(r,d_x)-H) = {report.scales.lower}")
    print(f"depth regime: {report.regime.regime} (threshold log3(d_x) = {report.regime.threshold:.4f})")
    return EXIT_OK


def _json_dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


_AUDIT_OVERRIDES = ('name', 'vocab_size', 'width', 'depth', 'heads', 'embedding_rank',
                    'attention_dim', 'positional_rank', 'seq_len')


def cmd_audit(config=None, compare=None, strict=False, as_json=False, out=None, **overrides):
    document = read_document(config) if config else {}
    if isinstance(document, dict):
        document = dict(document)
        for key in _AUDIT_OVERRIDES:
            if overrides.get(key) is not None:
                document[key] = overrides[key]
    first = load_config(document)
    if compare:
        result = compare_configs(first, load_config(compare))
        flagged = result.first.flagged or result.second.flagged
    else:
        result = diagnose(first)
        flagged = result.flagged
    print(result.to_json() if as_json else result.render_text())
    if out:
        with open(out, 'w') as f:
            f.write(result.to_json() + '\n')
    if strict and flagged:
        print("❌ strict audit: bottleneck flagged")
        return EXIT_STRICT
    return EXIT_OK


def _grid_spec(params, param='r', values=None, seeds=(0,)):
    return SweepSpec(
        param=param,
        values=tuple(values) if values else (params['r'],),
        seeds=tuple(seeds),
        L=params['L'], d_x=params['dx'], r=params['r'], H=params['H'], d_a=params['da'],
        N=params['N'], Z=params['Z'], V=params.get('V'), r_e=params['re'],
        position=params['position'], coordinate=params['coordinate'],
        partition=params.get('partition'), tol=params['tol'],
    )


def cmd_grid(seed=0, out=None, workers=1, **params):
    spec = _grid_spec(params, seeds=(seed,))
    rank, report = sweep_point(spec, seed, workers=workers)
    banner('GRID-TENSOR RANK')
    print(f"L={spec.L} d_x={spec.d_x} r={spec.r} H={spec.H} d_a={spec.d_a} "
          f"N={spec.N} Z={spec.Z} seed={seed}")
    print(f"empirical rank: {rank}")
    print(f"ln upper bound: {_fmt_log(report.upper_log)}")
    print(f"ln lower bound: {_fmt_log(report.lower_log)}")
    if report.upper_exact is not None:
        below_upper = rank <= report.upper_exact
    else:
        below_upper = rank == 0 or math.log(rank) <= report.upper_log + 1e-9
    above_lower = report.lower_exact is None or rank >= report.lower_exact
    if below_upper and above_lower:
        print("✅ sandwich holds: lower <= empirical rank <= upper")
    elif not below_upper:
        print("❌ empirical rank exceeds the upper bound")
    else:
        print("⚠️  empirical rank below the lower bound (possible on a measure-zero weight set "
              "or when the lower-bound assumptions fail)")
    if out:
        write_sweep_csv([sweep_row(spec, spec.r, seed, rank, report)], out)
        print(f"✅ wrote {out}")
    return EXIT_OK


_SWEEP_KEYS = {'dx': 'd_x'}


def cmd_sweep(param, values, out, seeds=3, seed_start=0, workers=1, **params):
    seed_list = range(seed_start, seed_start + seeds)
    spec = _grid_spec(params, param=_SWEEP_KEYS.get(param, param), values=values, seeds=seed_list)
    rows = rank_sweep(spec, workers=workers)
    write_sweep_csv(rows, out)
    print(f"✅ wrote {len(rows)} rows to {out}")
    return EXIT_OK


def _depth_from_lambda(lam):
    """lambda = 3^(L-2) for the constructions."""
    if lam < 1:
        raise InputError(f"lambda must be >= 1, got: {lam}")
    depth, value = 2, 1
    while value < lam:
        value *= 3
        depth += 1
    if value != lam:
        raise InputError(f"lambda must be a power of 3 for the constructions, got: {lam}")
    return depth


def _print_checks(checks):
    for name, passed in checks:
        print(f"{'✅' if passed else '❌'} {name}")
    return EXIT_OK if all(passed for _, passed in checks) else EXIT_VERIFY_FAILED


def cmd_witness(mode, d=1, lam=1, da=3, H=1, r=None, dx=None, N=None, k=1, d_input=None,
                seed=0, max_trials=10_000):
    banner(f'WITNESS: {mode}')
    if mode == 'hadamard':
        A = search_hadamard_witness(d, lam, seed=seed, max_trials=max_trials)
        print(f"A (row norm {A.row_norm}):")
        for row in A.A.tolist():
            print(f"  {row}")
        return _print_checks([
            ('hadamard power has full rank (numerical)', verify_hadamard_rank(A, lam)),
            ('hadamard power has full rank (exact)', verify_hadamard_rank(A, lam, exact=True)),
        ])
    depth = _depth_from_lambda(lam)
    A = search_hadamard_witness(d, lam, seed=seed, max_trials=max_trials)
    if mode == 'vocab':
        bundle = build_vocab_witness(A, d_x=dx, d_a=da, H=H, r=r, L=depth)
    elif mode == 'conv':
        bundle = build_conv_witness(A, d_x=dx, d_a=da, H=H, r=r, d_input=d_input, k=k, L=depth)
    else:
        bundle = build_largeN_witness(A, d_x=dx, d_a=da, H=H, r=r, N=N, L=depth, seed=seed)
    print(f"d={A.d} lambda={lam} (L={depth}) r={bundle.r} d_x={bundle.d_x} d_a={da} H={H} "
          f"N={bundle.seq_len} lower bound {bundle.lower_bound}")
    return _print_checks(bundle.verify())


def cmd_replay(manifest_path):
    manifest = RunManifest.load(manifest_path)
    if manifest.subcommand == 'replay':
        raise InputError(
            f"manifest {manifest_path} records a replay; point replay at the original run's manifest"
        )
    if manifest.version != __version__:
        logger.warning("manifest written by seprank %s, replaying with %s", manifest.version, __version__)
    return handler({'tool': manifest.subcommand, 'parameters': manifest.flags})


def handler(event):
    """Dispatch ``{'tool': name, 'parameters': {...}}``; returns the exit code."""
    tool_name = event.get('tool')
    params = event.get('parameters', {})

    tools_map = {
        'bounds': cmd_bounds,
        'audit': cmd_audit,
        'grid': cmd_grid,
        'sweep': cmd_sweep,
        'witness': cmd_witness,
        'replay': cmd_replay,
    }

    if tool_name not in tools_map:
        raise InputError(f"Unknown tool: {tool_name}")
    return tools_map[tool_name](**_with_defaults(TOOLS_BY_NAME[tool_name], params))


def _write_manifest(tool_name, params, manifest_path):
    """Next to ``--out`` when given, else ``seprank-<tool>.manifest.json`` in the working directory."""
    out = params.get('out')
    if manifest_path:
        path = manifest_path
    elif out:
        path = f"{out}.manifest.json"
    else:
        path = DEFAULT_MANIFEST.format(tool=tool_name)
    manifest = RunManifest(
        subcommand=tool_name,
        flags={k: v for k, v in params.items() if v is not None},
        seed=params.get('seed'),
        tolerance=params.get('tol'),
        outputs=[os.fspath(out)] if out else [],
    )
    return manifest.save(path)


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    params = vars(args)
    tool_name = params.pop('tool')
    manifest_path = params.pop('manifest', None)
    try:
        code = handler({'tool': tool_name, 'parameters': params})
    except CapabilityError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except SearchExhausted as exc:
        print(f"❌ search exhausted: {exc}", file=sys.stderr)
        return EXIT_SEARCH_EXHAUSTED
    except InputError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE
    if tool_name != 'replay':
        _write_manifest(tool_name, params, manifest_path)
    return code
