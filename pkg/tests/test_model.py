"""Embeddings, the attention layer, composition and the explicit-form oracle."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seprank.errors import CapabilityError, InputError
from seprank.model import (
    ConvEmbedding,
    ExplicitForm,
    LayerWeights,
    NetworkSpec,
    VocabEmbedding,
    calibrate_network,
    conv_embedding,
    embed_conv,
    embed_vocab,
    embedding_rank,
    explicit_form_eval,
    layer_forward,
    low_rank_factor,
    low_rank_positional,
    network_forward,
    random_layer,
    random_network,
    zero_positional,
)


def rel_err(got, want):
    denom = np.linalg.norm(want)
    return np.linalg.norm(got - want) / (denom if denom else 1.0)


def ones_layer(d=1, h=1, d_a=1):
    shape = (h, d_a, d)
    return LayerWeights(
        key=np.ones(shape), query=np.ones(shape), value=np.ones(shape), output=np.ones((h, d, d_a))
    )


# -- embeddings ---------------------------------------------------------------

def test_embed_vocab_one_hot_selection():
    e = VocabEmbedding(np.eye(2), zero_positional(2, 2))
    np.testing.assert_array_equal(embed_vocab(e, [0, 1]), [[1.0, 0.0], [0.0, 1.0]])


def test_embed_vocab_adds_positional_column():
    m_v = np.array([[1.0, 3.0], [2.0, 4.0]])
    e = VocabEmbedding(m_v, np.array([[10.0], [10.0]]))
    np.testing.assert_array_equal(embed_vocab(e, [0]), [[11.0, 12.0]])


def test_embed_vocab_zero_map():
    e = VocabEmbedding(np.zeros((3, 5)), zero_positional(3, 4))
    assert e.declared_rank == 0
    np.testing.assert_array_equal(embed_vocab(e, [4, 0, 2, 2]), np.zeros((4, 3)))


@pytest.mark.parametrize('tokens', [[0, 5], [-1, 0], [0.0, 1.0], [0, 1, 2]])
def test_embed_vocab_rejects_bad_tokens(tokens):
    e = VocabEmbedding(np.eye(3, 5), zero_positional(3, 2))
    with pytest.raises(InputError):
        embed_vocab(e, np.asarray(tokens))


def test_embed_conv_identity_kernel():
    e = ConvEmbedding(np.eye(3)[None, :, :], zero_positional(3, 2))
    xs = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]])
    np.testing.assert_array_equal(embed_conv(e, xs), xs)


def test_embed_conv_sums_patch():
    kernel = np.stack([np.eye(2), np.eye(2)])
    e = ConvEmbedding(kernel, zero_positional(2, 1))
    np.testing.assert_array_equal(embed_conv(e, np.array([[1.0, 0.0], [0.0, 1.0]])), [[1.0, 1.0]])


def test_embed_conv_zero_kernel_gives_positional():
    p = np.array([[1.0, 1.0, 1.0], [-2.0, -2.0, -2.0]])
    e = ConvEmbedding(np.zeros((2, 2, 3)), p)
    out = embed_conv(e, np.random.default_rng(0).standard_normal((6, 3)))
    np.testing.assert_array_equal(out, p.T)


def test_embed_conv_length_mismatch():
    e = ConvEmbedding(np.zeros((2, 2, 3)), zero_positional(2, 3))
    with pytest.raises(InputError):
        embed_conv(e, np.zeros((5, 3)))


def test_embedding_rank_identity():
    assert embedding_rank(VocabEmbedding(np.eye(5), zero_positional(5, 1))) == 5


def test_embedding_rank_of_factored_embedding():
    e = low_rank_factor(680, 2000, 16, seed=3)
    assert embedding_rank(e) == 16
    assert e.declared_rank == 16


def test_conv_rank_with_repeated_rank_one_slices():
    slice_ = np.outer([1.0, 2.0, -1.0], [0.5, 3.0])
    e = ConvEmbedding(np.stack([slice_, slice_, slice_]), zero_positional(3, 2))
    assert e.effective_matrix().shape == (3, 6)
    assert embedding_rank(e) == 1


@pytest.mark.parametrize('d_x, V, r', [(4, 8, 4), (4, 8, 1), (6, 10, 3), (5, 5, 5)])
def test_low_rank_factor_rank(d_x, V, r):
    e = low_rank_factor(d_x, V, r, seed=1)
    assert embedding_rank(e) == r
    u, w = e.factors
    assert u.shape == (d_x, r) and w.shape == (r, V)


def test_rank_one_factor_has_parallel_columns():
    m = low_rank_factor(4, 8, 1, seed=0).vocab_matrix
    base = m[:, 0] / np.linalg.norm(m[:, 0])
    for col in m.T:
        assert abs(abs(col @ base) - np.linalg.norm(col)) < 1e-12


@pytest.mark.parametrize('r', [0, 5, 9])
def test_low_rank_factor_rejects_rank(r):
    with pytest.raises(InputError):
        low_rank_factor(4, 8, r)


def test_low_rank_factor_column_norm_band():
    e = low_rank_factor(5, 6, 3, seed=2, column_norms=(1.0, 1.25))
    np.testing.assert_allclose(np.linalg.norm(e.vocab_matrix, axis=0), np.linspace(1.0, 1.25, 6))
    assert embedding_rank(e) == 3
    u, w = e.factors
    np.testing.assert_allclose(u @ w, e.vocab_matrix)


@pytest.mark.parametrize('band', [(0.0, 1.0), (2.0, 1.0)])
def test_low_rank_factor_rejects_bad_band(band):
    with pytest.raises(InputError):
        low_rank_factor(4, 8, 2, column_norms=band)


def test_low_rank_positional_rank():
    from seprank.numerics import numerical_rank
    assert numerical_rank(low_rank_positional(6, 5, 2, seed=4)) == 2
    assert not low_rank_positional(6, 5, 0).any()


# -- layer ----------------------------------------------------------------------

def test_layer_forward_scalar():
    np.testing.assert_allclose(layer_forward(ones_layer(), [[2.0]]), [[8.0]])


def test_layer_forward_two_positions():
    # out[i] = sum_j (y_i y_j) y_j
    np.testing.assert_allclose(layer_forward(ones_layer(), [[1.0], [2.0]]), [[5.0], [10.0]])


def test_layer_forward_zero_inputs():
    w = random_layer(4, 3, 2, np.random.default_rng(0))
    np.testing.assert_array_equal(layer_forward(w, np.zeros((5, 4))), np.zeros((5, 4)))


def test_layer_forward_shape_mismatch():
    with pytest.raises(InputError):
        layer_forward(ones_layer(d=2), np.zeros((3, 4)))


def test_layer_weights_validate_shapes():
    with pytest.raises(InputError):
        LayerWeights(np.ones((1, 2, 3)), np.ones((1, 2, 3)), np.ones((1, 2, 3)), np.ones((1, 2, 3)))


def test_layer_forward_batches():
    rng = np.random.default_rng(5)
    w = random_layer(3, 2, 2, rng)
    ys = rng.standard_normal((4, 3, 3))
    batched = layer_forward(w, ys)
    for b in range(4):
        np.testing.assert_allclose(batched[b], layer_forward(w, ys[b]), rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(0.5, 2.0))
def test_layer_is_cubic(seed, alpha):
    rng = np.random.default_rng(seed)
    w = random_layer(4, 3, 2, rng)
    ys = rng.standard_normal((3, 4))
    assert rel_err(layer_forward(w, alpha * ys), alpha ** 3 * layer_forward(w, ys)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_layer_is_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    w = random_layer(3, 2, 2, rng)
    ys = rng.standard_normal((5, 3))
    perm = rng.permutation(5)
    np.testing.assert_allclose(layer_forward(w, ys[perm]), layer_forward(w, ys)[perm], rtol=1e-12, atol=1e-14)


# -- network --------------------------------------------------------------------

def test_network_of_one_layer_is_layer_after_embedding():
    e = low_rank_factor(4, 6, 3, seed=0, N=3, r_e=1)
    n = random_network(1, 2, 4, 3, e, seed=2)
    tokens = np.array([5, 0, 2])
    np.testing.assert_allclose(
        network_forward(n, tokens), layer_forward(n.layers[0], embed_vocab(e, tokens)), rtol=1e-14
    )


def test_calibrated_network_has_unit_rms_layers():
    e = low_rank_factor(5, 6, 4, seed=0, N=4)
    n = random_network(3, 2, 5, 3, e, seed=4)
    tokens = np.random.default_rng(0).integers(0, 6, size=(16, 4))
    calibrated = calibrate_network(n, tokens)
    ys = embed_vocab(e, tokens)
    for layer in calibrated.layers:
        ys = layer_forward(layer, ys)
        assert np.sqrt(np.mean(np.sum(ys ** 2, axis=-1))) == pytest.approx(1.0)


def test_calibration_scales_the_function_by_a_constant():
    e = low_rank_factor(4, 5, 3, seed=1, N=3)
    n = random_network(2, 1, 4, 2, e, seed=7)
    calibrated = calibrate_network(n, np.array([[0, 1, 2], [3, 4, 0]]))
    tokens = np.random.default_rng(5).integers(0, 5, size=(10, 3))
    before = network_forward(n, tokens)
    after = network_forward(calibrated, tokens)
    ratio = np.vdot(after, before) / np.vdot(before, before)
    assert ratio > 0
    np.testing.assert_allclose(after, ratio * before, rtol=1e-9, atol=1e-12 * np.abs(after).max())
    for old, new in zip(n.layers, calibrated.layers):
        np.testing.assert_array_equal(old.key, new.key)


def test_calibration_leaves_zero_network_alone():
    zeros = LayerWeights(
        np.zeros((1, 2, 3)), np.zeros((1, 2, 3)), np.zeros((1, 2, 3)), np.zeros((1, 3, 2))
    )
    n = NetworkSpec((zeros,), low_rank_factor(3, 4, 2, N=2))
    calibrated = calibrate_network(n, np.array([[0, 1]]))
    np.testing.assert_array_equal(calibrated.layers[0].output, zeros.output)


@pytest.mark.parametrize('L', [1, 2, 3])
@pytest.mark.parametrize('alpha', [0.5, 1.3])
def test_network_homogeneity(L, alpha):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        kernel = rng.standard_normal((1, 3, 3))
        n = random_network(L, 2, 3, 2, ConvEmbedding(kernel, zero_positional(3, 3)), seed=seed)
        xs = rng.standard_normal((3, 3))
        got = network_forward(n, alpha * xs)
        want = alpha ** (3 ** L) * network_forward(n, xs)
        assert rel_err(got, want) <= 1e-9, (L, alpha, seed)


def test_conv_with_unit_kernel_width_equals_vocab_on_one_hot():
    rng = np.random.default_rng(11)
    kernel = rng.standard_normal((1, 4, 6))
    positional = rng.standard_normal((4, 3))
    conv = ConvEmbedding(kernel, positional)
    vocab = VocabEmbedding(conv.effective_matrix(), positional)
    tokens = np.array([5, 0, 3])
    np.testing.assert_array_equal(embed_conv(conv, np.eye(6)[tokens]), embed_vocab(vocab, tokens))


def test_network_spec_rejects_mismatched_layers():
    rng = np.random.default_rng(0)
    e = low_rank_factor(4, 5, 2, N=2)
    with pytest.raises(InputError):
        NetworkSpec((random_layer(4, 3, 1, rng), random_layer(4, 2, 1, rng)), e)
    with pytest.raises(InputError):
        NetworkSpec((random_layer(5, 3, 1, rng),), e)
    with pytest.raises(InputError):
        NetworkSpec((), e)


def test_fingerprint_tracks_weights():
    e = conv_embedding(2, 3, 2, N=2, seed=0)
    a = random_network(2, 1, 3, 2, e, seed=0)
    b = random_network(2, 1, 3, 2, e, seed=0)
    c = random_network(2, 1, 3, 2, e, seed=1)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


# -- explicit form ----------------------------------------------------------------

def test_explicit_form_scalar():
    f = ExplicitForm.from_layer(ones_layer())
    assert explicit_form_eval(f, [[2.0]], 0, 0) == pytest.approx(8.0)


def test_explicit_form_zero_a():
    f = ExplicitForm.from_layer(random_layer(3, 2, 2, np.random.default_rng(0)))
    zeroed = ExplicitForm(1, np.zeros_like(f.a), f.b)
    assert explicit_form_eval(zeroed, np.ones((3, 3)), 1, 2) == 0.0


def test_explicit_form_matches_layer_for_many_seeds():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d_x = int(rng.integers(1, 5))
        d_a = int(rng.integers(1, 4))
        h = int(rng.integers(1, 3))
        n = int(rng.integers(1, 5))
        w = random_layer(d_x, d_a, h, rng)
        ys = rng.standard_normal((n, d_x))
        want = layer_forward(w, ys)
        f = ExplicitForm.from_layer(w)
        for i in range(n):
            for p in range(d_x):
                got = explicit_form_eval(f, ys, i, p)
                assert got == pytest.approx(want[i, p], rel=1e-10, abs=1e-12), (seed, i, p)


def test_explicit_form_documented_case():
    rng = np.random.default_rng(7)
    w = random_layer(3, 2, 2, rng)
    ys = rng.standard_normal((3, 3))
    want = layer_forward(w, ys)
    f = ExplicitForm.from_layer(w)
    got = np.array([[explicit_form_eval(f, ys, i, p) for p in range(3)] for i in range(3)])
    assert rel_err(got, want) <= 1e-10


def test_explicit_form_depth_two_shape_is_accepted():
    rng = np.random.default_rng(0)
    shape = (2,) * 4 + (5, 2, 3)
    f = ExplicitForm(2, rng.standard_normal(shape), rng.standard_normal(shape))
    assert f.compositions == 4
    assert np.isfinite(explicit_form_eval(f, rng.standard_normal((2, 3)), 0, 1))


def test_explicit_form_of_two_unit_layers():
    f = ExplicitForm.from_layers((ones_layer(), ones_layer()))
    assert f.depth == 2
    assert explicit_form_eval(f, [[2.0]], 0, 0) == pytest.approx(512.0)


def test_explicit_form_matches_two_layer_stack():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d_x = int(rng.integers(1, 5))
        d_a = int(rng.integers(1, 4))
        h = int(rng.integers(1, 3))
        n = int(rng.integers(1, 5))
        layers = (random_layer(d_x, d_a, h, rng), random_layer(d_x, d_a, h, rng))
        ys = rng.standard_normal((n, d_x))
        want = layer_forward(layers[1], layer_forward(layers[0], ys))
        f = ExplicitForm.from_layers(layers)
        got = np.array([[explicit_form_eval(f, ys, i, p) for p in range(d_x)] for i in range(n)])
        assert rel_err(got, want) <= 1e-9, seed


def test_explicit_form_of_one_layer_stack_is_the_layer_form():
    w = random_layer(3, 2, 2, np.random.default_rng(3))
    np.testing.assert_array_equal(ExplicitForm.from_layers([w]).a, ExplicitForm.from_layer(w).a)


def test_explicit_form_builder_limits():
    rng = np.random.default_rng(0)
    w = random_layer(3, 2, 1, rng)
    with pytest.raises(CapabilityError):
        ExplicitForm.from_layers((w, w, w))
    with pytest.raises(InputError):
        ExplicitForm.from_layers((w, random_layer(3, 2, 2, rng)))


def test_explicit_form_rejects_deep_stacks():
    shape = (1,) * 13 + (14, 1, 1)
    f = ExplicitForm(3, np.ones(shape), np.ones(shape))
    with pytest.raises(CapabilityError):
        explicit_form_eval(f, [[1.0]], 0, 0)


def test_explicit_form_shape_validation():
    with pytest.raises(InputError):
        ExplicitForm(1, np.ones((1, 3, 1, 1)), np.ones((1, 3, 1, 1)))
