import numpy as np
import pytest

from src.autodiff.param_store import ARCH
from src.data_ops.data_processor import ClientShard
from src.opt_model.local_search import (
    SearchHyper,
    arch_gradient,
    client_local_search,
    client_local_train,
    dump_logits,
    evaluate,
    step_alpha,
    step_w,
)
from src.runner.federation import LocalWorker
from src.search_space.model_search import build_super_network
from src.utils.errors import ConfigError, DatasetError, NumericalError


@pytest.fixture
def shard():
    return ClientShard(0, np.arange(0, 36, 2), np.arange(1, 36, 2))


def _state(tiny_train, tiny_spec, shard, hyper, mode="search", genotype=None, seed=3):
    return LocalWorker(0, shard, tiny_train, hyper, mode, tiny_spec, seed, genotype).state


@pytest.mark.parametrize("kwargs", [{"eta_w": -0.1}, {"eta_alpha": -1.0}, {"lam": -0.5},
                                    {"local_epochs": -1}, {"batch_size": 0}, {"grad_clip": 0.0},
                                    {"momentum": 1.0}, {"weight_decay": -1e-4}])
def test_hyper_validation(kwargs):
    with pytest.raises(ConfigError):
        SearchHyper(**kwargs).validate()


def test_step_w_freezes_alpha(tiny_train, tiny_spec, shard, tiny_hyper):
    state = _state(tiny_train, tiny_spec, shard, tiny_hyper)
    alpha = state.arch.copy()
    weights = state.store.get_weights()
    batch = tiny_train.batch(shard.train_indices[:8])
    step_w(state, batch, tiny_hyper)
    np.testing.assert_array_equal(state.arch.alpha_normal, alpha.alpha_normal)
    np.testing.assert_array_equal(state.arch.alpha_reduce, alpha.alpha_reduce)
    assert any(not np.array_equal(a, b) for a, b in zip(weights, state.store.get_weights()))


def test_step_alpha_freezes_weights(tiny_train, tiny_spec, shard, tiny_hyper):
    state = _state(tiny_train, tiny_spec, shard, tiny_hyper)
    alpha = state.arch.copy()
    weights = state.store.get_weights()
    train_loss, val_loss = step_alpha(state, tiny_train.batch(shard.train_indices[:8]),
                                      tiny_train.batch(shard.val_indices[:8]), tiny_hyper)
    assert np.isfinite(train_loss) and np.isfinite(val_loss)
    for a, b in zip(weights, state.store.get_weights()):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(alpha.alpha_normal, state.arch.alpha_normal)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_step_alpha_matches_two_gradient_passes(tiny_train, tiny_spec, shard, lam):
    hyper = SearchHyper(eta_alpha=0.3, lam=lam, batch_size=8)
    state = _state(tiny_train, tiny_spec, shard, hyper)
    train = tiny_train.batch(shard.train_indices[:8])
    val = tiny_train.batch(shard.val_indices[:8])
    g_train, _ = arch_gradient(state, train)
    g_val, _ = arch_gradient(state, val)
    before = {pid: state.store[pid].copy() for pid in state.store.ids(ARCH)}
    step_alpha(state, train, val, hyper)
    for pid, alpha in before.items():
        expected = alpha - hyper.eta_alpha * (g_train[pid] + lam * g_val[pid])
        np.testing.assert_allclose(state.store[pid], expected, rtol=0, atol=1e-12)


def test_step_alpha_on_the_training_batch_doubles_the_gradient(tiny_train, tiny_spec, shard):
    hyper = SearchHyper(eta_alpha=0.3, lam=1.0, batch_size=8)
    state = _state(tiny_train, tiny_spec, shard, hyper)
    train = tiny_train.batch(shard.train_indices[:8])
    grads, _ = arch_gradient(state, train)
    before = {pid: state.store[pid].copy() for pid in state.store.ids(ARCH)}
    step_alpha(state, train, train, hyper)
    for pid, alpha in before.items():
        np.testing.assert_allclose(state.store[pid], alpha - hyper.eta_alpha * 2 * grads[pid], rtol=0, atol=1e-12)


def test_zero_epochs_return_inputs(tiny_train, tiny_spec, shard):
    hyper = SearchHyper(local_epochs=0, batch_size=8)
    state = _state(tiny_train, tiny_spec, shard, hyper)
    _, other, alpha_in = build_super_network(tiny_spec, seed=11)
    w_in = other.get_weights()
    w, alpha, n = client_local_search(state, w_in, alpha_in, hyper)
    assert n == 36
    for a, b in zip(w_in, w):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(alpha.alpha_reduce, alpha_in.alpha_reduce)
    assert alpha is not state.arch


def test_local_search_is_deterministic(tiny_train, tiny_spec, shard, tiny_hyper):
    outs = []
    for _ in range(2):
        state = _state(tiny_train, tiny_spec, shard, tiny_hyper)
        outs.append(client_local_search(state, state.store.get_weights(), state.arch.copy(), tiny_hyper))
    (w1, a1, _), (w2, a2, _) = outs
    for a, b in zip(w1, w2):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a1.alpha_normal, a2.alpha_normal)


def test_local_train_uses_whole_shard(tiny_train, tiny_spec, shard, tiny_hyper, sample_genotype):
    state = _state(tiny_train, tiny_spec, shard, tiny_hyper, mode="eval", genotype=sample_genotype)
    w_in = state.store.get_weights()
    w, n = client_local_train(state, w_in, tiny_hyper)
    assert n == shard.num_samples
    assert any(not np.array_equal(a, b) for a, b in zip(w_in, w))


def test_zero_learning_rate_keeps_weights(tiny_train, tiny_spec, shard, sample_genotype):
    hyper = SearchHyper(eta_w=0.0, local_epochs=2, batch_size=8)
    state = _state(tiny_train, tiny_spec, shard, hyper, mode="eval", genotype=sample_genotype)
    w_in = state.store.get_weights()
    w, _ = client_local_train(state, w_in, hyper)
    for a, b in zip(w_in, w):
        np.testing.assert_array_equal(a, b)


def test_empty_validation_part_rejected(tiny_train, tiny_spec, tiny_hyper):
    shard = ClientShard(0, np.arange(10), np.empty(0, dtype=np.int64))
    state = _state(tiny_train, tiny_spec, shard, tiny_hyper)
    with pytest.raises(DatasetError):
        client_local_search(state, state.store.get_weights(), state.arch.copy(), tiny_hyper)


def test_non_finite_weights_raise(tiny_train, tiny_spec, shard, tiny_hyper):
    state = _state(tiny_train, tiny_spec, shard, tiny_hyper)
    weights = state.store.get_weights()
    weights[-2][...] = np.nan
    with np.errstate(all="ignore"), pytest.raises(NumericalError):
        client_local_search(state, weights, state.arch.copy(), tiny_hyper)


def test_evaluate_agrees_with_logits(tiny_spec, tiny_test):
    net, store, arch = build_super_network(tiny_spec, seed=0)
    loss, acc = evaluate(net, store, arch, tiny_test, batch_size=5)
    logits = dump_logits(net, store, arch, tiny_test, batch_size=5)
    assert logits.shape == (len(tiny_test), 3)
    assert acc == pytest.approx(np.mean(np.argmax(logits, axis=1) == tiny_test.labels))
    assert np.isfinite(loss) and loss > 0
