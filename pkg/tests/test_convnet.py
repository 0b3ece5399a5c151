"""Tests for the convolutional sequence classifier and its binary sequence file."""

import math

import numpy as np
import pytest

from stressgraph.convnet import (
    ConvHeadConfig,
    ConvHeadParams,
    TokenEmbeddingSequence,
    batch_loss_and_gradients,
    bce_with_logits,
    classify,
    conv_forward,
    init_conv_params,
    load_token_embeddings,
    pad_sequence,
    param_blocks,
    params_from_blocks,
    sigmoid,
    train_conv,
    write_token_embeddings,
)
from stressgraph.evaluation import confusion, metrics
from stressgraph.gcn import DivergenceError, load_parameter_blocks, save_parameter_blocks

SMALL = dict(kernel_sizes=(2, 3), n_filters=4, embedding_dim=3, max_len=16)


def seq(doc_id: str, matrix) -> TokenEmbeddingSequence:
    return TokenEmbeddingSequence(doc_id=doc_id, matrix=np.asarray(matrix, dtype=np.float64))


# ----------------------------------------------------------- data types


def test_sequence_validation():
    with pytest.raises(ValueError):
        seq("a", np.zeros((0, 3)))
    with pytest.raises(ValueError):
        seq("a", np.zeros(3))
    with pytest.raises(ValueError):
        seq("a", [[np.nan, 0.0]])
    s = seq("a", [[1.0, 2.0]])
    assert s.length == 1 and s.dim == 2


def test_config_validation():
    with pytest.raises(ValueError):
        ConvHeadConfig(kernel_sizes=())
    with pytest.raises(ValueError):
        ConvHeadConfig(kernel_sizes=(0,))
    with pytest.raises(ValueError):
        ConvHeadConfig(n_filters=0)
    with pytest.raises(ValueError):
        ConvHeadConfig(dropout=1.0)
    with pytest.raises(ValueError):
        ConvHeadConfig(batch_size=0)


def test_init_shapes_and_bounds():
    config = ConvHeadConfig(**SMALL)
    params = init_conv_params(config)
    assert params.kernel_sizes == (2, 3)
    assert params.concat_dim == 8
    assert [k.shape for k in params.kernels] == [(2, 3, 4), (3, 3, 4)]
    assert all(np.all(b == 0.0) for b in params.conv_bias)
    assert params.dense_b[0] == 0.0
    for k_size, kernel in zip((2, 3), params.kernels):
        limit = math.sqrt(6.0 / (k_size * 3 + 4))
        assert np.abs(kernel).max() <= limit
    again = init_conv_params(config)
    np.testing.assert_array_equal(params.kernels[0], again.kernels[0])
    np.testing.assert_array_equal(params.dense_W, again.dense_W)


def test_default_concat_dim_is_300():
    params = init_conv_params(ConvHeadConfig(embedding_dim=8))
    assert params.kernel_sizes == (3, 4, 5)
    assert params.concat_dim == 300


# -------------------------------------------------------------- forward


def test_pad_sequence():
    m = np.ones((2, 3))
    padded = pad_sequence(m, 5)
    assert padded.shape == (5, 3)
    np.testing.assert_array_equal(padded[2:], 0.0)
    assert pad_sequence(m, 2) is m


def test_forward_zero_input_zero_logit():
    # Zero biases: every window of a zero sequence pools to zero.
    params = init_conv_params(ConvHeadConfig(**SMALL))
    logit = conv_forward(seq("a", np.zeros((4, 3))), params)
    assert logit == 0.0


def test_forward_short_sequence_reaches_all_banks():
    # L = 1 is padded up to the largest kernel, so every bank produces output.
    params = init_conv_params(ConvHeadConfig(**SMALL))
    logit = conv_forward(seq("a", [[1.0, -0.5, 0.25]]), params)
    assert math.isfinite(logit)


def test_forward_padding_invariance():
    # With zero conv biases, zero rows beyond the required minimum add only
    # zero-valued windows, which max-over-time ignores.
    rng = np.random.default_rng(0)
    params = init_conv_params(ConvHeadConfig(**SMALL))
    base = rng.normal(size=(6, 3))
    reference = conv_forward(seq("a", base), params)
    for extra in (1, 3, 10):
        padded = np.vstack([base, np.zeros((extra, 3))])
        assert conv_forward(seq("a", padded), params) == pytest.approx(reference, abs=1e-12)


def test_forward_dropout_needs_rng():
    params = init_conv_params(ConvHeadConfig(**SMALL))
    s = seq("a", np.ones((3, 3)))
    with pytest.raises(ValueError):
        conv_forward(s, params, training=True)
    # Inference never applies dropout.
    assert conv_forward(s, params) == conv_forward(s, params, training=False)


def test_forward_known_tiny_instance():
    # One filter of size 1 acting as a column sum makes the logit computable by hand.
    params = ConvHeadParams(
        kernels=(np.ones((1, 2, 1)),),
        conv_bias=(np.zeros(1),),
        dense_W=np.array([2.0]),
        dense_b=np.array([0.5]),
        dropout=0.0,
    )
    # Rows sum to 3.0, -1.0; ReLU then max picks 3.0; logit = 2 * 3 + 0.5.
    logit = conv_forward(seq("a", [[1.0, 2.0], [-3.0, 2.0]]), params)
    assert logit == pytest.approx(6.5, abs=1e-12)


# ------------------------------------------------------- loss and grads


def test_bce_known_values():
    assert bce_with_logits(0.0, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_with_logits(0.0, 0) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_with_logits(20.0, 1) == pytest.approx(2.061e-9, rel=1e-3)
    assert bce_with_logits(20.0, 0) == pytest.approx(20.0, rel=1e-6)
    assert bce_with_logits(-20.0, 0) == pytest.approx(2.061e-9, rel=1e-3)
    with pytest.raises(ValueError):
        bce_with_logits(0.0, 2)


def test_bce_label_symmetry():
    for z in (-5.0, -0.3, 0.0, 1.7, 30.0):
        assert bce_with_logits(z, 1) == pytest.approx(bce_with_logits(-z, 0), abs=1e-12)


def test_bce_stable_at_extremes():
    assert math.isfinite(bce_with_logits(1000.0, 0))
    assert bce_with_logits(1000.0, 1) == 0.0
    assert bce_with_logits(-1000.0, 0) == 0.0


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(3.0) == pytest.approx(0.9526, abs=5e-5)
    assert sigmoid(-3.0) == pytest.approx(0.0474, abs=5e-5)
    assert sigmoid(1000.0) == 1.0
    assert sigmoid(-1000.0) == pytest.approx(0.0, abs=1e-300)


def test_classify_boundary():
    assert classify(0.0) == 1
    assert classify(3.0) == 1
    assert classify(-3.0) == 0


def fd_gradients(loss_fn, arrays: dict, h: float = 1e-5) -> dict:
    out = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr)
        flat, gflat = arr.ravel(), grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        out[name] = grad
    return out


@pytest.mark.parametrize("case", range(6))
def test_conv_gradients_match_finite_differences(case):
    rng = np.random.default_rng(200 + case)
    config = ConvHeadConfig(**SMALL, seed=case)
    params = init_conv_params(config)
    # Zero biases put padded windows exactly on the ReLU/max kink, where finite
    # differences and subgradients legitimately disagree; jitter off the kink.
    for arr in param_blocks(params).values():
        arr += rng.normal(scale=0.1, size=arr.shape)
    sequences = [
        seq(f"d{i}", rng.normal(size=(int(rng.integers(1, 7)), 3))) for i in range(3)
    ]
    labels = [int(x) for x in rng.integers(0, 2, size=3)]
    dropout_masks = None
    if case % 2:
        dropout_masks = [(rng.random(params.concat_dim) >= 0.5) / 0.5 for _ in sequences]

    _, grads = batch_loss_and_gradients(sequences, labels, params, dropout_masks)
    arrays = param_blocks(params)
    fd = fd_gradients(
        lambda: batch_loss_and_gradients(sequences, labels, params, dropout_masks)[0],
        arrays,
    )
    for name in arrays:
        num = np.linalg.norm(grads[name] - fd[name])
        denom = np.linalg.norm(grads[name]) + np.linalg.norm(fd[name])
        assert num <= 1e-4 * max(denom, 1e-8), name


def test_batch_loss_is_mean():
    rng = np.random.default_rng(9)
    params = init_conv_params(ConvHeadConfig(**SMALL))
    sequences = [seq(f"d{i}", rng.normal(size=(4, 3))) for i in range(3)]
    labels = [1, 0, 1]
    loss, _ = batch_loss_and_gradients(sequences, labels, params)
    singles = [
        bce_with_logits(conv_forward(s, params), lab) for s, lab in zip(sequences, labels)
    ]
    assert loss == pytest.approx(np.mean(singles), abs=1e-12)
    with pytest.raises(ValueError):
        batch_loss_and_gradients([], [], params)


# -------------------------------------------------------------- training


def conv_toy(n_docs: int = 24, dim: int = 3):
    """Linearly separable sequences: class sign shows up in every row."""
    rng = np.random.default_rng(1)
    sequences, labels = [], []
    for i in range(n_docs):
        cls = i % 2
        center = 0.8 if cls == 1 else -0.8
        length = int(rng.integers(2, 7))
        sequences.append(seq(f"d{i}", rng.normal(loc=center, scale=0.1, size=(length, dim))))
        labels.append(cls)
    base = int(0.6 * n_docs)
    masks = {
        "train": np.array([i < base for i in range(n_docs)]),
        "val": np.array([base <= i < base + n_docs // 5 for i in range(n_docs)]),
        "test": np.array([i >= base + n_docs // 5 for i in range(n_docs)]),
    }
    return sequences, labels, masks


def test_train_conv_zero_epochs():
    sequences, labels, masks = conv_toy()
    config = ConvHeadConfig(**SMALL, epochs=0, seed=4)
    result = train_conv(sequences, labels, masks, config)
    init = init_conv_params(config)
    np.testing.assert_array_equal(result.params.kernels[0], init.kernels[0])
    np.testing.assert_array_equal(result.params.dense_W, init.dense_W)
    assert result.history == []


def test_train_conv_deterministic():
    sequences, labels, masks = conv_toy()
    config = ConvHeadConfig(**SMALL, epochs=3, batch_size=4, seed=7)
    a = train_conv(sequences, labels, masks, config)
    b = train_conv(sequences, labels, masks, config)
    np.testing.assert_array_equal(a.params.dense_W, b.params.dense_W)
    np.testing.assert_array_equal(a.params.kernels[1], b.params.kernels[1])
    assert [h.loss for h in a.history] == [h.loss for h in b.history]


def test_train_conv_learns_separable_toy():
    sequences, labels, masks = conv_toy()
    config = ConvHeadConfig(**SMALL, epochs=20, batch_size=8, learning_rate=1e-2, seed=0)
    result = train_conv(sequences, labels, masks, config)
    test_idx = np.flatnonzero(masks["test"])
    preds = [classify(conv_forward(sequences[i], result.params)) for i in test_idx]
    gold = [labels[i] for i in test_idx]
    report = metrics(confusion(preds, gold))
    assert report.f1 >= 0.95
    assert len(result.history) == 20
    assert result.history[-1].val_f1 == 1.0


@pytest.mark.filterwarnings("ignore:overflow")
def test_train_conv_divergence():
    sequences, labels, masks = conv_toy()
    config = ConvHeadConfig(**SMALL, epochs=10, learning_rate=1e160, dropout=0.0, seed=0)
    with pytest.raises(DivergenceError):
        train_conv(sequences, labels, masks, config)


def test_train_conv_validates_inputs():
    sequences, labels, masks = conv_toy()
    empty = {**masks, "train": np.zeros(len(sequences), dtype=bool)}
    with pytest.raises(ValueError):
        train_conv(sequences, labels, empty, ConvHeadConfig(**SMALL, epochs=1))
    bad_dim = ConvHeadConfig(kernel_sizes=(2, 3), n_filters=4, embedding_dim=5, epochs=1)
    with pytest.raises(ValueError):
        train_conv(sequences, labels, masks, bad_dim)


# ------------------------------------------------------------------- I/O


def test_sequence_file_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    sequences = [
        seq("alpha", rng.normal(size=(4, 3)).astype(np.float32).astype(np.float64)),
        seq("beta", rng.normal(size=(1, 3)).astype(np.float32).astype(np.float64)),
    ]
    path = tmp_path / "seqs.bin"
    write_token_embeddings(path, sequences)
    back = load_token_embeddings(path, ConvHeadConfig(**SMALL))
    assert [s.doc_id for s in back] == ["alpha", "beta"]
    for got, want in zip(back, sequences):
        np.testing.assert_array_equal(got.matrix, want.matrix)


def test_sequence_file_truncates_to_max_len(tmp_path):
    long = seq("a", np.arange(40 * 3, dtype=np.float64).reshape(40, 3))
    path = tmp_path / "seqs.bin"
    write_token_embeddings(path, [long])
    config = ConvHeadConfig(kernel_sizes=(2,), n_filters=2, embedding_dim=3, max_len=16)
    back = load_token_embeddings(path, config)
    assert back[0].length == 16
    np.testing.assert_array_equal(back[0].matrix, long.matrix[:16])


def test_sequence_file_rejects_wrong_dim(tmp_path):
    path = tmp_path / "seqs.bin"
    write_token_embeddings(path, [seq("a", np.zeros((2, 4)))])
    with pytest.raises(ValueError):
        load_token_embeddings(path, ConvHeadConfig(**SMALL))


def test_sequence_file_rejects_unknown_id(tmp_path):
    path = tmp_path / "seqs.bin"
    write_token_embeddings(path, [seq("ghost", np.zeros((2, 3)))])
    with pytest.raises(ValueError):
        load_token_embeddings(path, ConvHeadConfig(**SMALL), known_ids={"a", "b"})
    # The same file loads when the id is known.
    got = load_token_embeddings(path, ConvHeadConfig(**SMALL), known_ids={"ghost"})
    assert got[0].doc_id == "ghost"


def test_sequence_file_empty(tmp_path):
    path = tmp_path / "seqs.bin"
    write_token_embeddings(path, [])
    assert load_token_embeddings(path, ConvHeadConfig(**SMALL)) == []


def test_sequence_file_bad_magic(tmp_path):
    path = tmp_path / "seqs.bin"
    path.write_bytes(b"WRNG" + b"\x00" * 12)
    with pytest.raises(ValueError):
        load_token_embeddings(path, ConvHeadConfig(**SMALL))


def test_conv_checkpoint_roundtrip(tmp_path):
    params = init_conv_params(ConvHeadConfig(**SMALL, seed=11))
    path = tmp_path / "conv.bin"
    save_parameter_blocks(path, param_blocks(params))
    back = params_from_blocks(load_parameter_blocks(path), dropout=params.dropout)
    assert back.kernel_sizes == params.kernel_sizes
    for got, want in zip(back.kernels, params.kernels):
        np.testing.assert_array_equal(got, want)
    np.testing.assert_array_equal(back.dense_W, params.dense_W)
    np.testing.assert_array_equal(back.dense_b, params.dense_b)
