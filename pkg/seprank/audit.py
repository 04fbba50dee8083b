"""
Architecture auditor: load a model description and report the vocabulary
bottleneck (r < d_x), the attention overhang (H * d_a > d_x), the depth
regime, leading-order bound scales and parameter counts.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Optional

from seprank.bounds import BoundInputs, asymptotic_logs, depth_regime
from seprank.errors import InputError, SchemaError

logger = logging.getLogger(__name__)

CONFIG_SCHEMA = {
    'name': {
        'type': 'string',
        'required': True,
        'default': None,
        'description': 'Model name used in reports',
    },
    'vocab_size': {
        'type': 'integer',
        'required': True,
        'default': None,
        'description': 'Vocabulary size V (or k * d_input for patch embeddings)',
    },
    'width': {
        'type': 'integer',
        'required': True,
        'default': None,
        'description': 'Embedding width d_x',
    },
    'depth': {
        'type': 'integer',
        'required': True,
        'default': None,
        'description': 'Number of self-attention layers L',
    },
    'heads': {
        'type': 'integer',
        'required': True,
        'default': None,
        'description': 'Attention heads per layer H',
    },
    'embedding_rank': {
        'type': 'integer',
        'required': False,
        'default': 'min(vocab_size, width)',
        'description': 'Rank r of the vocabulary matrix',
    },
    'attention_dim': {
        'type': 'integer',
        'required': False,
        'default': 'width // heads',
        'description': 'Per-head attention dimension d_a',
    },
    'positional_rank': {
        'type': 'integer',
        'required': False,
        'default': 'min(width, seq_len)',
        'description': 'Rank r_e of the positional embedding matrix',
    },
    'seq_len': {
        'type': 'integer',
        'required': False,
        'default': None,
        'description': 'Sequence length N',
    },
    'source': {
        'type': 'string',
        'required': False,
        'default': None,
        'description': 'Where the numbers come from',
    },
}

# Annotations of published full-scale training results; reported, never computed.
CITED_RANK_REDUNDANCY = (
    "Published full-scale runs of an ALBERT-style factorization at r/d_x = 128/4096 "
    "found about 25% of the network size redundant (cited, not computed)."
)
CITED_SMALL_VOCAB = (
    "Small vocabularies cap the embedding rank: protein (ESM-1b, r/d_x = 33/1280) and "
    "pixel-intensity (Sparse Transformer) models sit in this regime, where deepening "
    "pays off over widening."
)
CITED_OVERHANG = (
    "Published T5-11B-style runs with H*d_a = 16*d_x found roughly 45% of the attention "
    "parameters redundant (cited, not computed)."
)


def _type_ok(value, kind):
    if kind == 'integer':
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == 'string':
        return isinstance(value, str)
    return False


def collect_errors(document):
    """Every schema problem in ``document`` as (field_path, message) pairs."""
    if not isinstance(document, dict):
        return [('$', f"config must be an object, got {type(document).__name__}")]
    errors = []
    for key in sorted(document):
        if key not in CONFIG_SCHEMA:
            errors.append((f'$.{key}', 'unknown field'))
    for key, spec in CONFIG_SCHEMA.items():
        path = f'$.{key}'
        if key not in document:
            if spec['required']:
                errors.append((path, 'missing required field'))
            continue
        value = document[key]
        if not _type_ok(value, spec['type']):
            errors.append((path, f"must be {spec['type']}, got {value!r}"))
        elif spec['type'] == 'integer' and value < 1:
            errors.append((path, f"must be a positive integer, got {value}"))
        elif spec['type'] == 'string' and not value.strip():
            errors.append((path, 'must not be empty'))
    if errors:
        return errors

    V, d_x, H = document['vocab_size'], document['width'], document['heads']
    r = document.get('embedding_rank')
    if r is not None and r > min(V, d_x):
        errors.append(('$.embedding_rank', f"r={r} exceeds min(vocab_size, width)={min(V, d_x)}"))
    if 'attention_dim' not in document and d_x // H < 1:
        errors.append(('$.heads', f"heads={H} > width={d_x}; set attention_dim explicitly"))
    r_e, n = document.get('positional_rank'), document.get('seq_len')
    if r_e is not None:
        cap = d_x if n is None else min(d_x, n)
        if r_e > cap:
            errors.append(('$.positional_rank', f"r_e={r_e} exceeds {cap}"))
    return errors


def validate_config(document):
    return [f"{path}: {message}" for path, message in collect_errors(document)]


@dataclass(frozen=True)
class ArchConfig:
    name: str
    vocab_size: int
    width: int
    depth: int
    heads: int
    embedding_rank: int
    attention_dim: int
    positional_rank: Optional[int] = None
    seq_len: Optional[int] = None
    source: Optional[str] = None

    @property
    def V(self):
        return self.vocab_size

    @property
    def d_x(self):
        return self.width

    @property
    def L(self):
        return self.depth

    @property
    def H(self):
        return self.heads

    @property
    def r(self):
        return self.embedding_rank

    @property
    def d_a(self):
        return self.attention_dim

    @property
    def N(self):
        return self.seq_len

    @property
    def r_e(self):
        return self.positional_rank

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def read_document(document):
    if isinstance(document, (str, os.PathLike)):
        try:
            with open(document, 'r') as f:
                return json.load(f)
        except OSError as exc:
            raise InputError(f"cannot read config {document}: {exc}")
        except json.JSONDecodeError as exc:
            raise SchemaError([('$', f"invalid JSON: {exc}")])
    return document


def load_config(document):
    """Validate a mapping (or a JSON file path) and apply the default rules."""
    document = read_document(document)
    errors = collect_errors(document)
    if errors:
        raise SchemaError(errors)
    V, d_x, H = document['vocab_size'], document['width'], document['heads']
    n = document.get('seq_len')
    r_e = document.get('positional_rank')
    if r_e is None and n is not None:
        r_e = min(d_x, n)
    return ArchConfig(
        name=document['name'],
        vocab_size=V,
        width=d_x,
        depth=document['depth'],
        heads=H,
        embedding_rank=document.get('embedding_rank', min(V, d_x)),
        attention_dim=document.get('attention_dim', d_x // H),
        positional_rank=r_e,
        seq_len=n,
        source=document.get('source'),
    )


@dataclass(frozen=True)
class ParamCount:
    per_layer: int
    layers_total: int
    embedding: int
    positional: int
    total: int


def param_count(c: ArchConfig, positional=None):
    """
    Weights of the analyzed architecture: 4 * H * d_a * d_x per layer, an
    embedding of V * d_x (V * r + r * d_x when factored) and a positional
    matrix of N * d_x (factored the same way when r_e < min(d_x, N)).
    """
    if positional is None:
        positional = c.seq_len is not None
    if positional and c.seq_len is None:
        raise InputError(f"{c.name}: seq_len is required to count positional parameters")
    per_layer = 4 * c.heads * c.attention_dim * c.width
    layers_total = c.depth * per_layer
    if c.embedding_rank < min(c.vocab_size, c.width):
        embedding = c.embedding_rank * (c.vocab_size + c.width)
    else:
        embedding = c.vocab_size * c.width
    pos = 0
    if positional:
        r_e = c.positional_rank
        if r_e < min(c.width, c.seq_len):
            pos = r_e * (c.seq_len + c.width)
        else:
            pos = c.seq_len * c.width
    return ParamCount(
        per_layer=per_layer,
        layers_total=layers_total,
        embedding=embedding,
        positional=pos,
        total=layers_total + embedding + pos,
    )


@dataclass(frozen=True)
class AuditReport:
    config: ArchConfig
    vocab_bottleneck: bool
    rank_ratio: float
    attention_overhang: bool
    overhang_ratio: float
    regime: object
    scales: object
    params: ParamCount
    width_to_vocab_ratio: float
    notes: tuple

    @property
    def flagged(self):
        return self.vocab_bottleneck or self.attention_overhang

    def to_dict(self):
        return {
            'name': self.config.name,
            'config': self.config.to_dict(),
            'vocab_bottleneck': {'flag': self.vocab_bottleneck, 'ratio': self.rank_ratio},
            'attention_overhang': {'flag': self.attention_overhang, 'ratio': self.overhang_ratio},
            'depth_regime': asdict(self.regime),
            'bound_scales': asdict(self.scales),
            'param_counts': asdict(self.params),
            'width_to_vocab_ratio': self.width_to_vocab_ratio,
            'notes': list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render_text(self):
        c = self.config
        lines = [
            '=' * 80,
            f"AUDIT: {c.name}",
            '=' * 80,
            f"V={c.V}  r={c.r}  d_x={c.d_x}  L={c.L}  H={c.H}  d_a={c.d_a}"
            + (f"  N={c.N}  r_e={c.r_e}" if c.N is not None else ''),
        ]
        if c.source:
            lines.append(f"source: {c.source}")
        mark = '⚠️ ' if self.vocab_bottleneck else '✅'
        lines.append(f"{mark} vocab bottleneck: {self.vocab_bottleneck} (r/d_x = {self.rank_ratio:.6g})")
        mark = '⚠️ ' if self.attention_overhang else '✅'
        lines.append(
            f"{mark} attention overhang: {self.attention_overhang} (H*d_a/d_x = {self.overhang_ratio:.6g})"
        )
        lines.append(
            f"depth regime: {self.regime.regime} (L={self.regime.depth}, "
            f"log3(d_x) = {self.regime.threshold:.4f})"
        )
        lines.append(f"log-sep scales: upper {self.scales.upper}, lower {self.scales.lower}")
        p = self.params
        lines.append(
            f"params: per_layer {p.per_layer:,}  layers {p.layers_total:,}  "
            f"embedding {p.embedding:,}  positional {p.positional:,}  total {p.total:,}"
        )
        lines.append(f"width/vocab: {self.width_to_vocab_ratio:.6g}")
        for note in self.notes:
            lines.append(f"  - {note}")
        return '\n'.join(lines)


def _notes(c: ArchConfig, regime):
    notes = []
    if c.r < c.d_x:
        notes.append(
            f"Embedding rank r={c.r} < d_x={c.d_x}: both bounds scale with r, "
            "so width beyond r does not raise them."
        )
        if c.V < c.d_x:
            notes.append(CITED_SMALL_VOCAB)
        else:
            notes.append(CITED_RANK_REDUNDANCY)
    if c.H * c.d_a > c.d_x:
        notes.append(
            f"H*d_a={c.H * c.d_a} > d_x={c.d_x}: the upper bound does not depend on H, "
            "so attention dimensions beyond d_x are capped by width."
        )
        notes.append(CITED_OVERHANG)
    if regime.regime == 'depth_efficiency':
        notes.append("L < log3(d_x): depth is exponentially more efficient than width here.")
    if c.d_x >= c.V:
        notes.append(
            "Width is at or beyond the vocabulary size, where published depth-efficiency "
            "crossovers were observed."
        )
    return tuple(notes)


def diagnose(c: ArchConfig):
    regime = depth_regime(c.L, c.d_x)
    scales = asymptotic_logs(BoundInputs(L=c.L, d_x=c.d_x, r=c.r, H=c.H))
    report = AuditReport(
        config=c,
        vocab_bottleneck=c.r < c.d_x,
        rank_ratio=c.r / c.d_x,
        attention_overhang=c.H * c.d_a > c.d_x,
        overhang_ratio=c.H * c.d_a / c.d_x,
        regime=regime,
        scales=scales,
        params=param_count(c),
        width_to_vocab_ratio=c.d_x / c.V,
        notes=_notes(c, regime),
    )
    logger.debug("audited %s: flagged=%s", c.name, report.flagged)
    return report


@dataclass(frozen=True)
class Comparison:
    first: AuditReport
    second: AuditReport
    param_delta: int
    larger_lower_scale: str

    def to_dict(self):
        return {
            'first': self.first.to_dict(),
            'second': self.second.to_dict(),
            'param_delta': self.param_delta,
            'larger_lower_scale': self.larger_lower_scale,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render_text(self):
        return '\n'.join([
            self.first.render_text(),
            self.second.render_text(),
            '=' * 80,
            f"param delta (second - first): {self.param_delta:+,}",
            f"larger lower-bound scale: {self.larger_lower_scale}",
        ])


def compare(c1: ArchConfig, c2: ArchConfig):
    """Side-by-side audit; params compared without positional terms unless both have N."""
    positional = c1.seq_len is not None and c2.seq_len is not None
    first, second = diagnose(c1), diagnose(c2)
    delta = param_count(c2, positional).total - param_count(c1, positional).total
    lo1, lo2 = first.scales.lower, second.scales.lower
    if lo1 == lo2:
        winner = 'tie'
    else:
        winner = c1.name if lo1 > lo2 else c2.name
    return Comparison(first=first, second=second, param_delta=delta, larger_lower_scale=winner)
