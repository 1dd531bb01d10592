import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraudlab import autoencoder
from fraudlab.autoencoder import AutoencoderModel, MlpParams, TrainConfig, init_params, loss_and_grads
from fraudlab.features import build_features, build_matrix
from fraudlab.ingest import ingest_dir
from fraudlab.quantile import nearest_rank
from oracles import numeric_grads, rel_err

DIMS = [4, 8, 4, 8, 4]


@pytest.mark.parametrize("instance", range(10))
def test_gradients_match_finite_differences(instance):
    rng = np.random.default_rng(100 + instance)
    params = init_params(DIMS, seed=instance)
    # random biases so no layer sits at a symmetric point
    params = MlpParams(params.weights, [rng.normal(0, 0.3, b.shape) for b in params.biases], "tanh")
    X = rng.normal(size=(12, 4))
    _, gw, gb = loss_and_grads(params, X)
    analytic = [g for pair in zip(gw, gb) for g in pair]
    for a, n in zip(analytic, numeric_grads(params, X)):
        assert np.max(rel_err(a, n)) <= 1e-5


def test_zero_network_error_is_one():
    zero = MlpParams([np.zeros((i, o)) for i, o in zip(DIMS[:-1], DIMS[1:])], [np.zeros(o) for o in DIMS[1:]], "tanh")
    assert autoencoder.reconstruction_errors(zero, np.ones(4)).tolist() == [1.0]
    assert autoencoder.reconstruction_errors(zero, np.zeros((3, 4))).tolist() == [0.0, 0.0, 0.0]


def independent_errors(params, X):
    errs = []
    for x in X:
        a = list(x)
        for k, (W, b) in enumerate(zip(params.weights, params.biases)):
            z = [sum(a[i] * W[i][j] for i in range(len(a))) + b[j] for j in range(W.shape[1])]
            a = z if k == len(params.weights) - 1 else [float(np.tanh(v)) for v in z]
        errs.append(sum((a[i] - x[i]) ** 2 for i in range(len(x))) / len(x))
    return np.array(errs)


def test_errors_match_independent_forward():
    rng = np.random.default_rng(4)
    params = init_params(DIMS, seed=9)
    X = rng.normal(size=(20, 4))
    assert np.allclose(autoencoder.reconstruction_errors(params, X), independent_errors(params, X), rtol=1e-12, atol=0)


def test_flag_uses_strict_threshold():
    params = init_params(DIMS, seed=0)
    errors = np.arange(1, 101, dtype=float)
    m = AutoencoderModel(params, nearest_rank(errors, 0.99))
    assert m.flag(errors).sum() == 1
    flat = np.full(50, 0.3)
    assert not AutoencoderModel(params, nearest_rank(flat, 0.99)).flag(flat).any()


def test_constant_data_is_learned():
    X = np.tile([0.4, -1.2, 0.7, 2.0], (5000, 1)) + np.random.default_rng(1).normal(0, 1e-6, size=(5000, 4))
    _, hist = autoencoder.train(X, TrainConfig(seed=3))
    assert hist.train_loss[-1] < 1e-4


@pytest.fixture(scope="module")
def corpus_matrix(small_corpus_dir):
    rows, _ = ingest_dir(small_corpus_dir)
    return build_matrix(build_features(rows))


@pytest.fixture(scope="module")
def trained(corpus_matrix):
    return autoencoder.train(corpus_matrix, TrainConfig(seed=5))


def test_history_properties(trained):
    model, hist = trained
    assert min(hist.val_loss) <= hist.val_loss[0]
    assert all(b < a for a, b in zip(hist.train_loss[:5], hist.train_loss[1:5]))
    best = hist.best_epoch - 1
    tr, va = hist.train_loss[best], hist.val_loss[best]
    assert max(tr, va) <= 2.0 * min(tr, va)
    assert len(hist.learning_rate) == hist.stopped_epoch


def test_training_flag_rate(trained, corpus_matrix):
    model, _ = trained
    X = corpus_matrix.values
    rate = model.flag(model.reconstruction_error(X)).mean()
    assert 0.01 - 1 / X.shape[0] <= rate <= 0.01


def test_training_is_deterministic(corpus_matrix, trained):
    model, hist = trained
    m2, h2 = autoencoder.train(corpus_matrix, TrainConfig(seed=5))
    assert h2.train_loss == hist.train_loss and h2.val_loss == hist.val_loss
    assert m2.threshold == model.threshold


def test_standardization_id_links_matrix(trained, corpus_matrix):
    model, _ = trained
    assert model.standardization_id == autoencoder.standardization_id(corpus_matrix.params)
    assert len(model.standardization_id) == 16


def test_errors_and_validation():
    with pytest.raises(ValueError):
        autoencoder.train(np.zeros((5, 4)))
    with pytest.raises(FloatingPointError):
        autoencoder.train(np.full((50, 4), 1e200), TrainConfig(max_epochs=2))
    with pytest.raises(ValueError):
        autoencoder.reconstruction_errors(init_params(DIMS, 0), np.array([np.nan, 0, 0, 0]))
    with pytest.raises(ValueError):
        TrainConfig(activation="sigmoid")


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_init_is_seeded_per_layer(seed):
    a, b = init_params(DIMS, seed), init_params(DIMS, seed)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    for W, (i, o) in zip(a.weights, zip(DIMS[:-1], DIMS[1:])):
        assert np.all(np.abs(W) <= np.sqrt(6.0 / (i + o)))
