"""
Constructive lower-bound assignments and the Hadamard-power rank check.

Three constructions place the rows of an equal-norm integer matrix A into the
embedding output (vocabulary, convolution) or into the first-layer sum
(large-N) following a single slot layout over the d_x coordinates:

    offset = alpha mod d_a      (alpha 0-based, half = (d_a - 1) / 2)
    offset <  half              P slot, column phi(alpha+1) of A
    half <= offset < d_a - 1    Q slot, column phi(alpha+1-half) of A
    offset == d_a - 1           ones slot
A P or Q slot whose column exceeds d is a zero slot. ``target_pattern`` is
the only place this table is implemented.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import sympy

from seprank.errors import AssumptionError, InputError, SearchExhausted
from seprank.model import (
    ConvEmbedding,
    LayerWeights,
    VocabEmbedding,
    embed_conv,
    embed_vocab,
    embedding_rank,
    NetworkSpec,
    calibrate_network,
    layer_forward,
    random_network,
    zero_positional,
)
from seprank.numerics import RankTolerance, multiset_coeff, numerical_rank
from seprank.septensor import TemplateSet

logger = logging.getLogger(__name__)

ZERO, P_SLOT, Q_SLOT, ONES = 0, 1, 2, 3

VOCAB, CONV, LARGE_N = 'vocab', 'conv', 'largeN'

# search space for equal-norm rows
_MAX_SQUARED_NORM = 400


def phi_index(j, d_a):
    """phi(j) = floor((j-1)/d_a) * (d_a-1) + ((j-1) mod d_a) + 1, 1-based."""
    if j < 1 or d_a < 2:
        raise InputError(f"phi_index needs j >= 1 and d_a >= 2, got j={j}, d_a={d_a}")
    return ((j - 1) // d_a) * (d_a - 1) + ((j - 1) % d_a) + 1


@dataclass(frozen=True, eq=False)
class WitnessMatrix:
    A: np.ndarray
    row_norm: int = field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.A)
        if arr.ndim != 2 or arr.size == 0:
            raise InputError(f"witness matrix must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.equal(np.mod(arr, 1), 0)) or np.any(arr < 0):
            raise InputError("witness matrix entries must be non-negative integers")
        arr = arr.astype(np.int64)
        norms = np.einsum('ij,ij->i', arr, arr)
        if np.any(norms != norms[0]):
            raise InputError(f"witness rows must share one squared norm, got {sorted(set(norms.tolist()))}")
        object.__setattr__(self, 'A', arr)
        object.__setattr__(self, 'row_norm', int(norms[0]))

    @property
    def rows(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.A.shape[1]

    @property
    def max_entry(self):
        return int(self.A.max())

    @classmethod
    def coerce(cls, a):
        return a if isinstance(a, WitnessMatrix) else cls(np.asarray(a))


def slot_layout(d_x, d_a, d):
    """
    Per-coordinate (kind, A column 0-based or -1) arrays for the shared slot table.

    P and Q slots take column phi(.) of A, and phi skips every d_a-th index, so
    not every column of A gets a slot: with d_a = 3 only columns 0, 2, 4, ...
    (0-based) are placed, and for d = 2 only column 0 reaches the embedding.
    Slots whose column exceeds d stay ZERO.
    """
    half = (d_a - 1) // 2
    kinds = np.full(d_x, ZERO, dtype=np.int64)
    columns = np.full(d_x, -1, dtype=np.int64)
    for alpha in range(d_x):
        offset = alpha % d_a
        if offset == d_a - 1:
            kinds[alpha] = ONES
        elif offset < half:
            col = phi_index(alpha + 1, d_a)
            if col <= d:
                kinds[alpha], columns[alpha] = P_SLOT, col - 1
        else:
            col = phi_index(alpha + 1 - half, d_a)
            if col <= d:
                kinds[alpha], columns[alpha] = Q_SLOT, col - 1
    return kinds, columns


def target_pattern(A, d_x, d_a, p_row=None, q_row=None, ones=1.0):
    """
    The case-defined vector: row ``p_row`` of A on P slots, row ``q_row`` on Q
    slots, ``ones`` on ones slots, zero elsewhere. A missing row leaves its
    slots at zero.
    """
    A = WitnessMatrix.coerce(A)
    kinds, columns = slot_layout(d_x, d_a, A.d)
    out = np.zeros(d_x)
    out[kinds == ONES] = ones
    if p_row is not None:
        mask = kinds == P_SLOT
        out[mask] = A.A[p_row, columns[mask]]
    if q_row is not None:
        mask = kinds == Q_SLOT
        out[mask] = A.A[q_row, columns[mask]]
    return out


@dataclass(frozen=True, eq=False)
class AssignmentBundle:
    kind: str
    witness: WitnessMatrix
    embedding: object
    templates: np.ndarray
    d_x: int
    d_a: int
    H: int
    r: int
    depth: int
    layer: Optional[LayerWeights] = None
    pi_p: Optional[np.ndarray] = None
    pi_q: Optional[np.ndarray] = None

    @property
    def seq_len(self):
        return self.embedding.seq_len

    @property
    def lower_bound(self):
        return multiset_coeff(self.witness.d, 3 ** (self.depth - 2))

    def expected_outputs(self):
        """Target embedding output per template: (Z, d_x)."""
        m = self.witness.rows
        rows = []
        for token in range(self.templates.shape[0]):
            if token < m:
                rows.append(target_pattern(self.witness, self.d_x, self.d_a, p_row=token))
            elif token < 2 * m:
                rows.append(target_pattern(self.witness, self.d_x, self.d_a, q_row=token - m))
            else:
                rows.append(target_pattern(self.witness, self.d_x, self.d_a))
        return np.stack(rows)

    def embedded_templates(self):
        """Embedding output of each template repeated over every position, at position 0."""
        n = self.seq_len
        if self.kind == CONV:
            xs = np.tile(self.templates, (1, n, 1))
            return embed_conv(self.embedding, xs)[:, 0, :]
        tokens = np.repeat(self.templates[:, None], n, axis=1)
        return embed_vocab(self.embedding, tokens)[:, 0, :]

    def sequence(self, j1, j2):
        """Token sequence pi_P(j1) on even positions, pi_Q(j2) on odd ones."""
        seq = np.empty(self.seq_len, dtype=np.int64)
        seq[0::2] = self.pi_p[j1]
        seq[1::2] = self.pi_q[j2]
        return seq

    def summed_input(self, j1, j2):
        """u = sum over positions of the embedded sequence (j1, j2)."""
        return embed_vocab(self.embedding, self.sequence(j1, j2)).sum(axis=0)

    def expected_summed_input(self, j1, j2):
        return target_pattern(self.witness, self.d_x, self.d_a, p_row=j1, q_row=j2, ones=self.seq_len)

    def verify(self, tol=None):
        """Run every check for this construction; returns [(check_name, passed)]."""
        tol = RankTolerance.coerce(tol)
        checks = [('embedding rank <= r', embedding_rank(self.embedding, tol) <= self.r)]
        if self.kind == LARGE_N:
            checks.extend(_verify_large_n(self))
        else:
            got = self.embedded_templates()
            checks.append(('embedding output matches target pattern',
                           bool(np.array_equal(got, self.expected_outputs()))))
            if self.kind == CONV:
                readers = np.count_nonzero(self.embedding.kernel, axis=(0, 2))
                checks.append(('each coordinate reads at most one (l, lambda)',
                               bool(np.all(readers <= 1))))
        for name, passed in checks:
            logger.debug("%s witness check %r: %s", self.kind, name, passed)
        return checks


def _verify_large_n(bundle: AssignmentBundle):
    m, n = bundle.witness.rows, bundle.seq_len
    pairs = list(itertools.product(range(m), repeat=2))
    seqs = np.stack([bundle.sequence(j1, j2) for j1, j2 in pairs])
    embedded = embed_vocab(bundle.embedding, seqs)
    u = embedded.sum(axis=1)
    expected_u = np.stack([bundle.expected_summed_input(j1, j2) for j1, j2 in pairs])
    kinds, _ = slot_layout(bundle.d_x, bundle.d_a, bundle.witness.d)

    mixing = np.einsum('hda,hax->dx', bundle.layer.output, bundle.layer.value)
    expected_out = u @ mixing.T
    out = layer_forward(bundle.layer, embedded)
    scale = max(1.0, float(np.abs(expected_out).max()))
    first_layer_ok = bool(np.all(np.abs(out - expected_out[:, None, :]) <= 1e-9 * scale))
    return [
        ('summed input matches target pattern', bool(np.array_equal(u, expected_u))),
        ('ones slots sum to N', bool(np.all(u[:, kinds == ONES] == n))),
        ('first-layer output equals mixing applied to summed input', first_layer_ok),
    ]


def _check_common(A, d_a, H, depth):
    A = WitnessMatrix.coerce(A)
    if d_a < 3 or d_a % 2 == 0:
        raise AssumptionError('odd attention dimension d_a >= 3', f"got d_a={d_a}")
    if H < 1:
        raise AssumptionError('H >= 1', f"got H={H}")
    if depth < 2:
        raise AssumptionError('L >= 2', f"3^(L-2) undefined at L={depth}")
    expected_rows = multiset_coeff(A.d, 3 ** (depth - 2))
    if A.rows != expected_rows:
        raise AssumptionError(
            'A has multiset(d, 3^(L-2)) rows',
            f"d={A.d}, L={depth} needs {expected_rows} rows, got {A.rows}",
        )
    return A


def _resolve_rank(A, H, r, spare):
    """r defaults to 2d + H (+1 for the large-N split); an explicit r must reproduce d."""
    if r is None:
        return 2 * A.d + H + spare
    if (r - spare - H) // 2 != A.d:
        raise AssumptionError(
            'd = floor((r - H)/2)' if not spare else 'd = floor((r - 1 - H)/2)',
            f"r={r}, H={H} gives d={(r - spare - H) // 2}, A has d={A.d}",
        )
    return r


def _pattern_matrix(A, d_x, d_a, V):
    m = A.rows
    cols = []
    for token in range(V):
        if token < m:
            cols.append(target_pattern(A, d_x, d_a, p_row=token))
        elif token < 2 * m:
            cols.append(target_pattern(A, d_x, d_a, q_row=token - m))
        else:
            cols.append(target_pattern(A, d_x, d_a))
    return np.stack(cols, axis=1)


def build_vocab_witness(A, d_x=None, d_a=3, H=1, r=None, L=2, V=None, N=2):
    """
    M_V columns follow the target pattern: tokens [0, m) carry row i of A on
    P slots, tokens [m, 2m) carry row i - m on Q slots, token 2m only the
    ones slots. Positional embedding is zero.
    """
    A = _check_common(A, d_a, H, L)
    r = _resolve_rank(A, H, r, spare=0)
    d_x = d_x or r
    m = A.rows
    V = V or 2 * m + 1
    if V < 2 * m + 1:
        raise AssumptionError(
            'V >= 2*multiset((r-H)/2, 3^(L-2)) + 1', f"need V >= {2 * m + 1}, got V={V}"
        )
    embedding = VocabEmbedding(_pattern_matrix(A, d_x, d_a, V), zero_positional(d_x, N))
    return AssignmentBundle(
        kind=VOCAB, witness=A, embedding=embedding, templates=np.arange(2 * m + 1),
        d_x=d_x, d_a=d_a, H=H, r=r, depth=L,
    )


def build_conv_witness(A, d_x=None, d_a=3, H=1, r=None, d_input=None, k=1, L=2, N=2):
    """
    Indicator kernel W[l, alpha, lam] = 1 iff k*lam + l = alpha and alpha is a
    P, Q or ones slot; patch templates carry the target pattern so that each
    coordinate reads exactly its own entry.
    """
    A = _check_common(A, d_a, H, L)
    r = _resolve_rank(A, H, r, spare=0)
    d_x = d_x or r
    if k < 1:
        raise InputError(f"kernel width must be >= 1, got: {k}")
    d_input = d_input or math.ceil(d_x / k)
    if k * d_input < d_x:
        raise AssumptionError('k * d_input >= d_x', f"k={k}, d_input={d_input}, d_x={d_x}")
    kinds, _ = slot_layout(d_x, d_a, A.d)
    kernel = np.zeros((k, d_x, d_input))
    for alpha in np.flatnonzero(kinds != ZERO):
        lam, l = divmod(int(alpha), k)
        kernel[l, alpha, lam] = 1.0

    targets = _pattern_matrix(A, d_x, d_a, 2 * A.rows + 1).T
    padded = np.zeros((targets.shape[0], k * d_input))
    padded[:, :d_x] = targets
    # patch[l, lam] = target[k*lam + l]
    patches = padded.reshape(targets.shape[0], d_input, k).transpose(0, 2, 1)
    return AssignmentBundle(
        kind=CONV, witness=A, embedding=ConvEmbedding(kernel, zero_positional(d_x, N)),
        templates=patches, d_x=d_x, d_a=d_a, H=H, r=r, depth=L,
    )


def repetition_maps(A: WitnessMatrix, N):
    """
    pi_P(j), pi_Q(j) of length N/2: segment s (1-based, width max(A)) repeats
    token s (P) or s + d (Q) A[j, s-1] times and pads with token 0.
    """
    E, d, half_n = A.max_entry, A.d, N // 2
    t = np.arange(half_n)
    segment = t // E
    within = t % E
    pi_p = np.zeros((A.rows, half_n), dtype=np.int64)
    pi_q = np.zeros((A.rows, half_n), dtype=np.int64)
    in_range = segment < d
    for j in range(A.rows):
        counts = np.zeros(half_n, dtype=np.int64)
        counts[in_range] = A.A[j, segment[in_range]]
        hit = in_range & (within < counts)
        pi_p[j, hit] = segment[hit] + 1
        pi_q[j, hit] = segment[hit] + 1 + d
    return pi_p, pi_q


def build_largeN_witness(A, d_x=None, d_a=3, H=1, r=None, N=None, L=2, V=None, seed=0):
    """
    First-layer summation witness: K = Q = indicator at (0, d_a-1) per head,
    so every attention score is 1 and the layer output is
    (sum_h W^O_h W^V_h) applied to the sum of the embedded inputs.
    """
    A = _check_common(A, d_a, H, L)
    r = _resolve_rank(A, H, r, spare=1)
    d_x = d_x or r
    V = V or r
    if V < r:
        raise AssumptionError('V >= r', f"got V={V}, r={r}")
    if d_x < d_a:
        raise AssumptionError('d_x >= d_a', f"the ones slot d_a-1 must exist, got d_x={d_x}")
    if A.max_entry < 1:
        raise AssumptionError('A has a positive entry', "all-zero witness matrix")
    required = A.max_entry * (r - 1 - H)
    if N is None:
        N = max(required + required % 2, 2)
    if N < required:
        raise AssumptionError(
            'N >= E*(r-1-H)', f"need N >= {required} (E={A.max_entry}, r={r}, H={H}), got N={N}"
        )
    if N % 2:
        raise InputError(f"N must be even for a balanced split, got N={N}")

    d = A.d
    kinds, columns = slot_layout(d_x, d_a, d)
    vocab = np.zeros((d_x, V))
    vocab[kinds == ONES, :] = 1.0
    for alpha in np.flatnonzero(kinds == P_SLOT):
        vocab[alpha, columns[alpha] + 1] = 1.0
    for alpha in np.flatnonzero(kinds == Q_SLOT):
        vocab[alpha, columns[alpha] + 1 + d] = 1.0

    rng = np.random.default_rng(seed)
    indicator = np.zeros((H, d_a, d_x))
    indicator[:, 0, d_a - 1] = 1.0
    scale = 1.0 / np.sqrt(d_x)
    layer = LayerWeights(
        key=indicator, query=indicator.copy(),
        value=rng.standard_normal((H, d_a, d_x)) * scale,
        output=rng.standard_normal((H, d_x, d_a)) * scale,
    )
    pi_p, pi_q = repetition_maps(A, N)
    logger.info("large-N witness: d=%d, rows=%d, E=%d, N=%d", d, A.rows, A.max_entry, N)
    return AssignmentBundle(
        kind=LARGE_N, witness=A, embedding=VocabEmbedding(vocab, zero_positional(d_x, N)),
        templates=np.arange(V), d_x=d_x, d_a=d_a, H=H, r=r, depth=L,
        layer=layer, pi_p=pi_p, pi_q=pi_q,
    )


def verify_hadamard_rank(A, lam, tol=None, exact=False):
    """True iff (A A^T)^(hadamard lam) has full rank multiset(d, lam)."""
    A = WitnessMatrix.coerce(A)
    if lam < 1:
        raise InputError(f"lambda must be >= 1, got: {lam}")
    expected = multiset_coeff(A.d, lam)
    if A.rows != expected:
        raise InputError(f"A must have multiset({A.d}, {lam}) = {expected} rows, got {A.rows}")
    gram = A.A @ A.A.T
    if exact:
        powered = sympy.Matrix(gram.tolist()).applyfunc(lambda x: sympy.Integer(x) ** lam)
        return powered.rank() == expected
    powered = gram.astype(float) ** lam
    return numerical_rank(powered, tol) == expected


def _rows_by_norm(d, max_norm=_MAX_SQUARED_NORM):
    """Non-negative integer vectors of length d grouped by squared norm (norm >= 1)."""
    bound = math.isqrt(max_norm)
    groups = {}
    for vec in itertools.product(range(bound + 1), repeat=d):
        norm = sum(v * v for v in vec)
        if 1 <= norm <= max_norm:
            groups.setdefault(norm, []).append(vec)
    return groups


def search_hadamard_witness(d, lam, seed=0, max_trials=10_000):
    """
    Randomized search for an equal-norm integer A whose Gram matrix has a
    full-rank lam-th Hadamard power. Each trial picks a squared norm with
    enough candidate rows and samples multiset(d, lam) distinct ones.
    """
    if d < 1 or lam < 1:
        raise InputError(f"need d >= 1 and lambda >= 1, got d={d}, lambda={lam}")
    rows_needed = multiset_coeff(d, lam)
    if d == 1:
        return WitnessMatrix(np.ones((1, 1), dtype=np.int64))
    groups = _rows_by_norm(d)
    norms = sorted(c for c, vecs in groups.items() if len(vecs) >= rows_needed)
    if not norms:
        raise SearchExhausted(
            f"no squared norm <= {_MAX_SQUARED_NORM} has {rows_needed} rows of length {d}; "
            "this is a search limit, not evidence against existence"
        )
    rng = np.random.default_rng(seed)
    for trial in range(max_trials):
        norm = norms[int(rng.integers(len(norms)))]
        candidates = groups[norm]
        picks = rng.choice(len(candidates), size=rows_needed, replace=False)
        A = WitnessMatrix(np.array([candidates[i] for i in sorted(picks)], dtype=np.int64))
        if verify_hadamard_rank(A, lam) and verify_hadamard_rank(A, lam, exact=True):
            logger.info("hadamard witness d=%d lambda=%d found at trial %d (norm %d)", d, lam, trial, norm)
            return A
        logger.debug("trial %d with norm %d rejected", trial, norm)
    raise SearchExhausted(
        f"no witness for d={d}, lambda={lam} within {max_trials} trials (seed {seed}); "
        "this is a search limit, not evidence against existence"
    )


def bundle_to_network(bundle: AssignmentBundle, seed=0, calibration_batch=16):
    """
    A depth-L network over the bundle's embedding, plus its template set.

    Layers are Gaussian; a large-N bundle keeps its constructed first layer.
    Layers are calibrated on random template sequences, which scales the
    network function by a constant only.
    """
    random_layers = random_network(
        bundle.depth, bundle.H, bundle.d_x, bundle.d_a, bundle.embedding, seed=seed
    ).layers
    if bundle.layer is not None:
        random_layers = (bundle.layer,) + random_layers[1:]
    templates = TemplateSet.of(bundle.templates)
    rng = np.random.default_rng(seed + 1)
    idx = rng.integers(0, templates.size, size=(calibration_batch, bundle.seq_len))
    network = calibrate_network(NetworkSpec(random_layers, bundle.embedding), templates.gather(idx))
    logger.info("%s witness network: L=%d, Z=%d, N=%d",
                bundle.kind, bundle.depth, templates.size, bundle.seq_len)
    return network, templates
