"""
The analyzed self-attention network: vocabulary and convolution embeddings,
the unnormalized multi-head layer, depth-L composition and the explicit
polynomial form of a stack.

Shapes follow the column convention of the formulas: an embedding matrix is
d_x x V, positional embeddings are d_x x N (column i is position i). Sequences
are arrays of shape (..., N, d_x) with an optional leading batch axis.
"""
from __future__ import annotations

import hashlib
import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from seprank.config import MAX_EXPLICIT_TERMS_C
from seprank.errors import CapabilityError, InputError
from seprank.numerics import as_matrix, c_of_l, numerical_rank

logger = logging.getLogger(__name__)


def _finite(arr, name):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    return arr


def zero_positional(d_x, N):
    return np.zeros((d_x, N))


def low_rank_positional(d_x, N, r_e, seed=0):
    """Positional matrix of rank r_e (r_e = 0 gives the zero matrix)."""
    if r_e == 0:
        return zero_positional(d_x, N)
    if not 1 <= r_e <= min(d_x, N):
        raise InputError(f"positional rank must be in [0, {min(d_x, N)}], got: {r_e}")
    rng = np.random.default_rng(seed)
    left = rng.standard_normal((d_x, r_e))
    right = rng.standard_normal((r_e, N))
    return left @ right / np.sqrt(r_e)


@dataclass(frozen=True, eq=False)
class VocabEmbedding:
    vocab_matrix: np.ndarray
    positional: np.ndarray
    declared_rank: Optional[int] = None
    factors: Optional[tuple] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        m_v = as_matrix(self.vocab_matrix, 'vocab_matrix')
        pos = _finite(self.positional, 'positional')
        if pos.ndim != 2 or pos.shape[0] != m_v.shape[0]:
            raise InputError(
                f"positional must be {m_v.shape[0]} x N, got shape {pos.shape}"
            )
        object.__setattr__(self, 'vocab_matrix', m_v)
        object.__setattr__(self, 'positional', pos)
        if self.declared_rank is None:
            object.__setattr__(self, 'declared_rank', numerical_rank(m_v))

    @property
    def width(self):
        return self.vocab_matrix.shape[0]

    @property
    def vocab_size(self):
        return self.vocab_matrix.shape[1]

    @property
    def seq_len(self):
        return self.positional.shape[1]

    @property
    def kernel_width(self):
        return 1

    def effective_matrix(self):
        return self.vocab_matrix


@dataclass(frozen=True, eq=False)
class ConvEmbedding:
    """Kernel of shape (k, d_x, d_input) with k = M / N raw inputs per patch."""
    kernel: np.ndarray
    positional: np.ndarray

    def __post_init__(self):
        kernel = _finite(self.kernel, 'kernel')
        if kernel.ndim != 3 or kernel.size == 0:
            raise InputError(f"kernel must be (k, d_x, d_input), got shape {kernel.shape}")
        pos = _finite(self.positional, 'positional')
        if pos.ndim != 2 or pos.shape[0] != kernel.shape[1]:
            raise InputError(
                f"positional must be {kernel.shape[1]} x N, got shape {pos.shape}"
            )
        object.__setattr__(self, 'kernel', kernel)
        object.__setattr__(self, 'positional', pos)

    @property
    def kernel_width(self):
        return self.kernel.shape[0]

    @property
    def width(self):
        return self.kernel.shape[1]

    @property
    def input_dim(self):
        return self.kernel.shape[2]

    @property
    def vocab_size(self):
        """Effective V = k * d_input."""
        return self.kernel_width * self.input_dim

    @property
    def seq_len(self):
        return self.positional.shape[1]

    def effective_matrix(self):
        """Reshape (k, d_x, d_input) into the d_x x (k * d_input) matrix."""
        return np.transpose(self.kernel, (1, 0, 2)).reshape(self.width, self.vocab_size)


Embedding = Union[VocabEmbedding, ConvEmbedding]


def embed_vocab(e: VocabEmbedding, tokens):
    """Column ``token`` of M_V plus positional column i, for each position i."""
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise InputError(f"tokens must be integer indices, got dtype {tokens.dtype}")
    if tokens.shape[-1] != e.seq_len:
        raise InputError(f"expected {e.seq_len} tokens, got {tokens.shape[-1]}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= e.vocab_size):
        raise InputError(f"token index out of range [0, {e.vocab_size})")
    return e.vocab_matrix.T[tokens] + e.positional.T


def embed_conv(e: ConvEmbedding, xs):
    """output[i] = sum_j W_conv[j] x^{k*i + j} + p^i over each patch of k raw inputs."""
    xs = _finite(xs, 'conv input')
    k, n = e.kernel_width, e.seq_len
    if xs.ndim < 2 or xs.shape[-2] != n * k or xs.shape[-1] != e.input_dim:
        raise InputError(
            f"conv input must be (..., {n * k}, {e.input_dim}), got shape {xs.shape}"
        )
    patches = xs.reshape(xs.shape[:-2] + (n, k, e.input_dim))
    return np.einsum('lad,...nld->...na', e.kernel, patches) + e.positional.T


def embed(e: Embedding, raw_input):
    if isinstance(e, VocabEmbedding):
        return embed_vocab(e, raw_input)
    return embed_conv(e, raw_input)


def embedding_rank(e: Embedding, tol=None):
    return numerical_rank(e.effective_matrix(), tol)


def low_rank_factor(d_x, V, r, seed=0, N=1, r_e=0, column_norms=None):
    """
    M_V = U @ W with U: d_x x r and W: r x V, Gaussian factors scaled by 1/sqrt(r).

    With ``column_norms=(lo, hi)`` the columns of W are rescaled so that the
    token columns of M_V have norms evenly spaced over [lo, hi]; the rank is
    unchanged. The positional matrix is d_x x N of rank r_e (zero when r_e = 0).
    """
    if not 1 <= r <= min(d_x, V):
        raise InputError(f"r must be in [1, min(d_x, V)] = [1, {min(d_x, V)}], got: {r}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((d_x, r)) / np.sqrt(r)
    w = rng.standard_normal((r, V)) / np.sqrt(r)
    if column_norms is not None:
        lo, hi = column_norms
        if not 0 < lo <= hi:
            raise InputError(f"column_norms must satisfy 0 < lo <= hi, got: {column_norms}")
        current = np.linalg.norm(u @ w, axis=0)
        current[current == 0.0] = 1.0
        w = w * (np.linspace(lo, hi, V) / current)
    positional = low_rank_positional(d_x, N, r_e, seed=seed + 1)
    return VocabEmbedding(u @ w, positional, declared_rank=r, factors=(u, w))


def conv_embedding(k, d_x, d_input, N, seed=0, positional=None):
    rng = np.random.default_rng(seed)
    kernel = rng.standard_normal((k, d_x, d_input)) / np.sqrt(d_x)
    if positional is None:
        positional = zero_positional(d_x, N)
    return ConvEmbedding(kernel, positional)


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """Per-head weights stacked on the first axis: K, Q, V are (H, d_a, d_x), O is (H, d_x, d_a)."""
    key: np.ndarray
    query: np.ndarray
    value: np.ndarray
    output: np.ndarray

    def __post_init__(self):
        arrays = {n: _finite(getattr(self, n), n) for n in ('key', 'query', 'value', 'output')}
        shape = arrays['key'].shape
        if len(shape) != 3:
            raise InputError(f"key must be (H, d_a, d_x), got shape {shape}")
        for name in ('query', 'value'):
            if arrays[name].shape != shape:
                raise InputError(f"{name} shape {arrays[name].shape} != key shape {shape}")
        h, d_a, d_x = shape
        if arrays['output'].shape != (h, d_x, d_a):
            raise InputError(
                f"output must be {(h, d_x, d_a)}, got shape {arrays['output'].shape}"
            )
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def heads(self):
        return self.key.shape[0]

    @property
    def attention_dim(self):
        return self.key.shape[1]

    @property
    def width(self):
        return self.key.shape[2]


def random_layer(d_x, d_a, H, rng):
    scale = 1.0 / np.sqrt(d_x)
    return LayerWeights(
        key=rng.standard_normal((H, d_a, d_x)) * scale,
        query=rng.standard_normal((H, d_a, d_x)) * scale,
        value=rng.standard_normal((H, d_a, d_x)) * scale,
        output=rng.standard_normal((H, d_x, d_a)) * scale,
    )


def layer_forward(w: LayerWeights, ys):
    """
    out[i] = sum_h W^O_h sum_j <W^Q_h y^i, W^K_h y^j> W^V_h y^j.

    No softmax, feed-forward, residual or normalization.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.ndim < 2 or ys.shape[-1] != w.width:
        raise InputError(f"inputs must be (..., N, {w.width}), got shape {ys.shape}")
    q = np.einsum('had,...nd->...hna', w.query, ys)
    k = np.einsum('had,...nd->...hna', w.key, ys)
    v = np.einsum('had,...nd->...hna', w.value, ys)
    scores = np.einsum('...hia,...hja->...hij', q, k)
    mixed = np.einsum('...hij,...hja->...hia', scores, v)
    return np.einsum('hda,...hia->...id', w.output, mixed)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    layers: tuple
    embedding: Embedding

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InputError("network needs at least one layer")
        first = layers[0]
        for idx, layer in enumerate(layers):
            if (layer.heads, layer.attention_dim, layer.width) != (
                first.heads, first.attention_dim, first.width
            ):
                raise InputError(f"layer {idx} shape differs from layer 0")
        if first.width != self.embedding.width:
            raise InputError(
                f"embedding width {self.embedding.width} != layer width {first.width}"
            )
        object.__setattr__(self, 'layers', layers)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def heads(self):
        return self.layers[0].heads

    @property
    def width(self):
        return self.layers[0].width

    @property
    def attention_dim(self):
        return self.layers[0].attention_dim

    @property
    def seq_len(self):
        return self.embedding.seq_len

    def fingerprint(self):
        digest = hashlib.sha256()
        if isinstance(self.embedding, VocabEmbedding):
            digest.update(b'vocab')
            digest.update(self.embedding.vocab_matrix.tobytes())
        else:
            digest.update(b'conv')
            digest.update(self.embedding.kernel.tobytes())
        digest.update(self.embedding.positional.tobytes())
        for layer in self.layers:
            for arr in (layer.key, layer.query, layer.value, layer.output):
                digest.update(arr.tobytes())
        return digest.hexdigest()


def random_network(L, H, d_x, d_a, embedding, seed=0):
    if L < 1 or H < 1 or d_a < 1:
        raise InputError(f"need L, H, d_a >= 1, got L={L}, H={H}, d_a={d_a}")
    rng = np.random.default_rng(seed)
    layers = tuple(random_layer(d_x, d_a, H, rng) for _ in range(L))
    return NetworkSpec(layers, embedding)


def layers_forward(layers: Sequence[LayerWeights], ys):
    for layer in layers:
        ys = layer_forward(layer, ys)
    return ys


def network_forward(n: NetworkSpec, raw_input):
    return layers_forward(n.layers, embed(n.embedding, raw_input))


def calibrate_network(n: NetworkSpec, raw_input):
    """
    Rescale each layer's W^O by one positive scalar so that its RMS output
    vector norm on ``raw_input`` is 1.

    The network function changes by a constant factor, so every rank of every
    grid tensor is unchanged; deep stacks stop drifting towards 0 or inf.
    """
    ys = embed(n.embedding, raw_input)
    layers = []
    for layer in n.layers:
        out = layer_forward(layer, ys)
        rms = float(np.sqrt(np.mean(np.sum(out ** 2, axis=-1))))
        scale = 1.0 / rms if rms > 0.0 and np.isfinite(rms) else 1.0
        layers.append(LayerWeights(layer.key, layer.query, layer.value, layer.output * scale))
        ys = out * scale
    logger.debug("calibrated %d layers", len(layers))
    return NetworkSpec(tuple(layers), n.embedding)


@dataclass(frozen=True, eq=False)
class ExplicitForm:
    """
    A/B matrices of the explicit depth-L form.

    ``a`` and ``b`` have shape (H,)*C + (C+1, d_a, d_x) with C = C(L). Along the
    (C+1) axis ``a[..., c-1, :, :]`` is A^(c) for c in 1..C+1 and
    ``b[..., c, :, :]`` is B^(c) for c in 0..C.
    """
    depth: int
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.depth < 1:
            raise InputError(f"explicit form depth must be >= 1, got: {self.depth}")
        c = c_of_l(self.depth)
        a = _finite(self.a, 'A matrices')
        b = _finite(self.b, 'B matrices')
        if a.ndim != c + 3 or a.shape[c] != c + 1:
            raise InputError(f"A must have shape (H,)*{c} + ({c + 1}, d_a, d_x), got {a.shape}")
        if b.shape != a.shape:
            raise InputError(f"B shape {b.shape} != A shape {a.shape}")
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'b', b)

    @property
    def compositions(self):
        return c_of_l(self.depth)

    @property
    def heads(self):
        return self.a.shape[0] if self.compositions else 1

    @classmethod
    def from_layer(cls, w: LayerWeights):
        """A^(1) = W^V, A^(2) = W^Q, B^(1) = W^K, B^(0) = (W^O)^T per head."""
        a = np.stack([w.value, w.query], axis=1)
        b = np.stack([np.transpose(w.output, (0, 2, 1)), w.key], axis=1)
        return cls(1, a, b)

    @classmethod
    def from_layers(cls, layers: Sequence[LayerWeights]):
        """
        Explicit form of a stack of one or two layers.

        For two layers, substituting layer 1 into
        out_{i,p} = sum_g W'^O_g[p] (W'^V_g z_k) <W'^K_g z_k, W'^Q_g z_i>
        gives a chain over positions (j1, k, j2, j3) with head tuple
        (g, h1, h2, h3):

            B0 = (W'^O_g W'^V_g W^O_h1)^T  A1 = W^V_h1  B1 = W^K_h1
            A2 = W^Q_h1                    B2 = W^Q_h2  A3 = W^K_h2
            B3 = M^T W^V_h2                A4 = W^V_h3  B4 = W^K_h3
            A5 = W^Q_h3

        with M = (W'^K_g W^O_h2)^T (W'^Q_g W^O_h3) joining the two inner sums
        that meet at the second layer's score.
        """
        layers = tuple(layers)
        if len(layers) == 1:
            return cls.from_layer(layers[0])
        if len(layers) != 2:
            raise CapabilityError(
                f"explicit forms are built for one or two layers, got {len(layers)}"
            )
        first, second = layers
        if first.heads != second.heads or first.width != second.width:
            raise InputError("layers must share heads and width")
        H, d_a, d_x = first.heads, first.attention_dim, first.width
        c = c_of_l(2)
        a = np.empty((H,) * c + (c + 1, d_a, d_x))
        b = np.empty_like(a)
        for g, h1, h2, h3 in itertools.product(range(H), repeat=c):
            mixing = (second.key[g] @ first.output[h2]).T @ (second.query[g] @ first.output[h3])
            idx = (g, h1, h2, h3)
            a[idx] = np.stack([
                first.value[h1], first.query[h1], first.key[h2], first.value[h3],
                first.query[h3],
            ])
            b[idx] = np.stack([
                (second.output[g] @ second.value[g] @ first.output[h1]).T,
                first.key[h1], first.query[h2], mixing.T @ first.value[h2], first.key[h3],
            ])
        return cls(2, a, b)


def explicit_form_eval(f: ExplicitForm, ys, i, p):
    """
    Evaluate sum_{j, h, r} B^(0)_{r1,p} prod_c <A^(c)_{r_c}, y^{j_c}> prod_c <B^(c)_{r_{c+1}}, y^{j_c}>
    with j_{C+1} = i. Each summed position j_c contracts into a d_a x d_a factor,
    so every head assignment costs C matrix products.
    """
    c = f.compositions
    if c > MAX_EXPLICIT_TERMS_C:
        raise CapabilityError(
            f"explicit form with C(L)={c} > {MAX_EXPLICIT_TERMS_C} is not evaluated (L <= 2 only)"
        )
    ys = as_matrix(ys, 'embedded sequence')
    n, d_x = ys.shape
    if f.a.shape[-1] != d_x:
        raise InputError(f"sequence width {d_x} != form width {f.a.shape[-1]}")
    if not 0 <= i < n or not 0 <= p < d_x:
        raise InputError(f"position {i} / coordinate {p} out of range")
    total = 0.0
    for heads in itertools.product(range(f.heads), repeat=c):
        a = f.a[heads]
        b = f.b[heads]
        chain = b[0][:, p]
        for idx in range(1, c + 1):
            left = a[idx - 1] @ ys.T
            right = b[idx] @ ys.T
            chain = chain @ (left @ right.T)
        total += chain @ (a[c] @ ys[i])
    return float(total)
