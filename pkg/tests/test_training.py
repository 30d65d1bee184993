"""Optimizer, loss, config parsing, and the training loop contracts."""

import math

import numpy as np
import pytest

from convimpact import model as m
from convimpact import training as tr
from convimpact.data import Conversation, EmbeddingTable, Utterance
from convimpact.errors import ContractError, DataIntegrityError, DimensionError


def make_dataset(n_conversations, n_utts, dim, seed, rating_fn):
    """Tiny dataset where rating_fn(conv_index) sets each rating."""
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(dim=dim)
    conversations = []
    for i in range(n_conversations):
        conv = Conversation(
            f"conv-{i}",
            rating_fn(i),
            [Utterance("user" if j % 2 == 0 else "system", f"turn {j}") for j in range(n_utts)],
        )
        for j in range(n_utts):
            table.add(conv.utterance_id(j), rng.normal(size=dim))
        conversations.append(conv)
    return conversations, table


# ---------------------------------------------------------------------------
# config


def test_config_defaults_match_contract():
    cfg = tr.TrainConfig()
    assert cfg.learning_rate == 1e-5
    assert cfg.loss == "mse"
    assert cfg.dropout_embed == 0.1
    assert cfg.epochs == 100
    assert cfg.batch_size == 32
    assert cfg.patience == 10
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon) == (0.9, 0.999, 1e-8)


@pytest.mark.parametrize(
    "overrides",
    [
        {"learning_rate": 0.0},
        {"dropout_embed": 1.0},
        {"dropout_embed": -0.1},
        {"epochs": 0},
        {"batch_size": 0},
        {"patience": -1},
        {"loss": "mae"},
        {"adam_beta1": 1.0},
        {"adam_epsilon": 0.0},
    ],
)
def test_config_validation_rejects_bad_values(overrides):
    with pytest.raises(ContractError):
        tr.TrainConfig(**overrides).validate()


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "train.toml"
    path.write_text('learning_rate = 0.001\nepochs = 7\nseed = 42\n')
    cfg = tr.load_train_config(path)
    assert cfg.learning_rate == 0.001
    assert cfg.epochs == 7
    assert cfg.seed == 42
    assert cfg.batch_size == 32  # untouched default


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "train.toml"
    path.write_text("learning_rte = 0.001\n")
    with pytest.raises(ContractError, match="learning_rte"):
        tr.load_train_config(path)


def test_config_file_rejects_tables(tmp_path):
    path = tmp_path / "train.toml"
    path.write_text("[adam]\nbeta1 = 0.9\n")
    with pytest.raises(ContractError, match="flat"):
        tr.load_train_config(path)


# ---------------------------------------------------------------------------
# mse


def test_mse_zero_when_equal():
    assert tr.mse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_mse_single_pair():
    assert tr.mse_loss([0.0], [2.0]) == 4.0


def test_mse_hand_computed():
    assert tr.mse_loss([1, 2, 3], [2, 2, 5]) == pytest.approx(5.0 / 3.0, abs=1e-12)


def test_mse_length_mismatch():
    with pytest.raises(ContractError):
        tr.mse_loss([1.0], [1.0, 2.0])


# ---------------------------------------------------------------------------
# adam


def test_adam_first_step_magnitude_is_learning_rate():
    cfg = tr.TrainConfig(learning_rate=0.01)
    params = {"p": np.array([[1.0, -2.0]])}
    grads = {"p": np.array([[0.3, -4.0]])}
    state = tr.AdamState()
    updated = tr.adam_step(params, grads, state, cfg)
    step = updated["p"] - params["p"]
    # bias-corrected m/sqrt(v) is sign(g) on the first step, up to epsilon
    np.testing.assert_allclose(step, [[-0.01, 0.01]], rtol=1e-5)


def test_adam_zero_gradient_keeps_parameters():
    cfg = tr.TrainConfig(learning_rate=0.1)
    params = {"p": np.array([[3.0]])}
    state = tr.AdamState()
    for _ in range(5):
        params = tr.adam_step(params, {"p": np.zeros((1, 1))}, state, cfg)
    assert params["p"][0, 0] == 3.0


def test_adam_three_steps_match_scalar_oracle():
    # oracle: an independent scalar Adam on f(x) = (x - 5)^2
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    x = 1.0
    mm = vv = 0.0
    oracle_trace = []
    for t in range(1, 4):
        g = 2.0 * (x - 5.0)
        mm = b1 * mm + (1 - b1) * g
        vv = b2 * vv + (1 - b2) * g * g
        m_hat = mm / (1 - b1**t)
        v_hat = vv / (1 - b2**t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        oracle_trace.append(x)

    cfg = tr.TrainConfig(learning_rate=lr, adam_beta1=b1, adam_beta2=b2, adam_epsilon=eps)
    params = {"x": np.array([[1.0]])}
    state = tr.AdamState()
    for t in range(3):
        g = {"x": 2.0 * (params["x"] - 5.0)}
        params = tr.adam_step(params, g, state, cfg)
        assert params["x"][0, 0] == pytest.approx(oracle_trace[t], abs=1e-12)


def test_adam_shape_mismatch_rejected():
    cfg = tr.TrainConfig()
    with pytest.raises(ContractError):
        tr.adam_step(
            {"p": np.zeros((2, 2))}, {"p": np.zeros((1, 2))}, tr.AdamState(), cfg
        )


# ---------------------------------------------------------------------------
# train


def test_constant_target_converges_fast():
    convs, table = make_dataset(12, 4, 3, seed=0, rating_fn=lambda i: 3.0)
    cfg = tr.TrainConfig(epochs=200, batch_size=4, dropout_embed=0.0, seed=1, patience=200)
    trained = tr.train("ara", convs, [], table, cfg)
    preds = [
        m.forward(trained.params, table.conversation_matrix(c), c.id).q for c in convs
    ]
    assert tr.mse_loss(preds, [3.0] * len(convs)) < 0.01


def test_training_is_bit_deterministic():
    convs, table = make_dataset(8, 3, 3, seed=2, rating_fn=lambda i: 1.0 + (i % 5))
    dev = convs[:3]
    cfg = tr.TrainConfig(epochs=3, batch_size=4, seed=7)
    a = tr.train("ara", convs, dev, table, cfg)
    b = tr.train("ara", convs, dev, table, cfg)
    for name, arr in a.params.tensors.items():
        assert np.array_equal(arr, b.params.tensors[name]), name
    assert [(h.train_loss, h.dev_pearson) for h in a.history] == [
        (h.train_loss, h.dev_pearson) for h in b.history
    ]


def test_missing_embedding_names_the_utterance():
    convs, table = make_dataset(3, 3, 3, seed=3, rating_fn=lambda i: 2.0)
    del table.entries["conv-1:2"]
    with pytest.raises(DataIntegrityError, match="conv-1:2"):
        tr.train("ara", convs, [], table, tr.TrainConfig(epochs=1))


def test_missing_rating_is_rejected():
    convs, table = make_dataset(3, 3, 3, seed=4, rating_fn=lambda i: 2.0)
    convs[1].rating = None
    with pytest.raises(DataIntegrityError, match="conv-1"):
        tr.train("ara", convs, [], table, tr.TrainConfig(epochs=1))


def test_empty_training_set_is_rejected():
    with pytest.raises(ContractError):
        tr.train("ara", [], [], EmbeddingTable(dim=3), tr.TrainConfig())


def test_selected_epoch_has_best_dev_pearson():
    convs, table = make_dataset(20, 4, 4, seed=5, rating_fn=lambda i: 1.0 + (i % 5))
    cfg = tr.TrainConfig(epochs=8, batch_size=5, seed=3, learning_rate=0.01)
    trained = tr.train("ara", convs[4:], convs[:4], table, cfg)
    finite = [h.dev_pearson for h in trained.history if math.isfinite(h.dev_pearson)]
    assert finite
    assert trained.best_dev_pearson == max(finite)
    chosen = next(h for h in trained.history if h.epoch == trained.epoch_selected)
    assert chosen.dev_pearson == trained.best_dev_pearson


def test_early_stopping_respects_patience():
    convs, table = make_dataset(16, 3, 3, seed=6, rating_fn=lambda i: 1.0 + (i % 5))
    cfg = tr.TrainConfig(epochs=50, batch_size=4, seed=1, patience=2, learning_rate=1e-9)
    trained = tr.train("ara", convs[4:], convs[:4], table, cfg)
    # with a vanishing learning rate dev stops improving immediately
    assert len(trained.history) < 50


def test_train_loss_decreases_on_learnable_data():
    rng = np.random.default_rng(8)
    convs, table = make_dataset(30, 5, 4, seed=8, rating_fn=lambda i: 0.0)
    direction = rng.normal(size=4)
    for conv in convs:
        mean_proj = np.mean(
            [table.entries[conv.utterance_id(j)] @ direction for j in range(5)]
        )
        conv.rating = float(np.clip(3.0 + 2.0 * mean_proj, 1.0, 5.0))
    cfg = tr.TrainConfig(epochs=30, batch_size=8, seed=2, learning_rate=0.005,
                         dropout_embed=0.0, patience=30)
    trained = tr.train("ara", convs, [], table, cfg)
    assert trained.history[-1].train_loss < trained.history[0].train_loss


@pytest.mark.parametrize("variant,hidden", [("ara-o", 6), ("ara-a", 5), ("nara", 6)])
def test_all_variants_train_one_epoch(variant, hidden):
    convs, table = make_dataset(6, 4, 3, seed=9, rating_fn=lambda i: 1.0 + (i % 5))
    cfg = tr.TrainConfig(epochs=1, batch_size=3, seed=0)
    trained = tr.train(variant, convs, [], table, cfg, hidden_dim=hidden)
    assert trained.params.variant == variant
    assert len(trained.history) == 1
    assert math.isfinite(trained.history[0].train_loss)


def test_warm_start_requires_matching_architecture(tmp_path):
    convs, table = make_dataset(4, 3, 3, seed=10, rating_fn=lambda i: 3.0)
    other = m.initialize_params("ara", 5, 200, seed=0)
    with pytest.raises(DimensionError):
        tr.train("ara", convs, [], table, tr.TrainConfig(epochs=1), init=other)
    wrong_variant = m.initialize_params("nara", 3, 6, seed=0)
    with pytest.raises(ContractError):
        tr.train("ara", convs, [], table, tr.TrainConfig(epochs=1), init=wrong_variant)


def test_warm_start_resumes_from_given_parameters():
    convs, table = make_dataset(10, 3, 3, seed=11, rating_fn=lambda i: 1.0 + (i % 5))
    cfg = tr.TrainConfig(epochs=2, batch_size=4, seed=5, learning_rate=1e-12,
                         dropout_embed=0.0)
    first = tr.train("ara", convs, [], table, cfg)
    resumed = tr.train("ara", convs, [], table, cfg, init=first.params)
    # learning rate is negligible, so the warm start dominates the result
    for name, arr in resumed.params.tensors.items():
        np.testing.assert_allclose(arr, first.params.tensors[name], atol=1e-9)


def test_divergence_is_reported_with_epoch():
    convs, table = make_dataset(4, 3, 3, seed=12, rating_fn=lambda i: 3.0)
    init = m.initialize_params("ara", 3, 200, seed=0)
    init.tensors["rating_b"][0, 0] = 1e308  # q overflows to inf in the loss
    with pytest.raises(tr.DivergenceError, match="epoch 1"):
        tr.train("ara", convs, [], table, tr.TrainConfig(epochs=1), init=init)
