"""Model fitting: MSE regression with Adam, dev-set selection, finetuning.

Training is deterministic given (dataset order, config, init). All
randomness (shuffling, dropout masks, parameter init) flows from the config
seed through named substreams. The model returned is the snapshot from the
epoch with the highest dev Pearson; training stops early once `patience`
consecutive epochs bring no dev improvement.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import autodiff as ad
from . import model as m
from .data import Conversation, EmbeddingTable
from .errors import (
    ContractError,
    DataIntegrityError,
    DimensionError,
    DivergenceError,
)
from .evaluation import pearson
from .errors import UndefinedMetricError
from .seeding import named_stream


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    loss: str = "mse"
    dropout_embed: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def validate(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.loss != "mse":
            raise ContractError(f"unsupported loss {self.loss!r}, only 'mse'")
        if not 0.0 <= self.dropout_embed < 1.0:
            raise ContractError("dropout_embed must lie in [0, 1)")
        if self.epochs < 1:
            raise ContractError("epochs must be positive")
        if self.batch_size < 1:
            raise ContractError("batch_size must be positive")
        if self.patience < 0:
            raise ContractError("patience must be non-negative")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ContractError("adam betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ContractError("adam_epsilon must be positive")


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def load_train_config(path) -> TrainConfig:
    """Parse a flat key = value (TOML) config file. Unknown keys are errors."""
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    for key, value in doc.items():
        if isinstance(value, dict):
            raise ContractError(f"{path}: config must be flat, {key!r} is a table")
    unknown = sorted(set(doc) - _CONFIG_FIELDS)
    if unknown:
        raise ContractError(f"{path}: unknown config keys: {', '.join(unknown)}")
    config = TrainConfig(**doc)
    config.validate()
    return config


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_pearson: float  # nan when undefined (no dev data or constant values)


@dataclass
class TrainedModel:
    params: m.ModelParams
    best_dev_pearson: float
    epoch_selected: int
    history: list[EpochStats] = field(default_factory=list)


def mse_loss(predicted: Sequence[float], target: Sequence[float]) -> float:
    """Mean of squared differences over two equal-length sequences."""
    if len(predicted) != len(target):
        raise ContractError(
            f"mse_loss: length mismatch {len(predicted)} vs {len(target)}"
        )
    if len(predicted) == 0:
        raise ContractError("mse_loss: empty sequences")
    total = 0.0
    for p, t in zip(predicted, target):
        d = float(p) - float(t)
        total += d * d
    return total / len(predicted)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    gradients: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new arrays, mutates state."""
    state.t += 1
    b1, b2, eps, lr = (
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
        config.learning_rate,
    )
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    updated = {}
    for name in sorted(params):
        p = params[name]
        g = gradients.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ContractError(
                f"adam_step: gradient shape {g.shape} does not match "
                f"parameter {name!r} shape {p.shape}"
            )
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        updated[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated


def _prepare(
    conversations: Sequence[Conversation],
    embeddings: EmbeddingTable,
    require_rating: bool = True,
) -> list[tuple[Conversation, np.ndarray]]:
    prepared = []
    for conv in conversations:
        if not conv.utterances:
            raise DataIntegrityError(f"conversation {conv.id!r} has no utterances")
        if require_rating and conv.rating is None:
            raise DataIntegrityError(f"conversation {conv.id!r} has no rating")
        prepared.append((conv, embeddings.conversation_matrix(conv)))
    return prepared


def _dev_pearson(params: m.ModelParams, dev: list[tuple[Conversation, np.ndarray]]) -> float:
    if len(dev) < 2:
        return float("nan")
    preds, targets = [], []
    for conv, matrix in dev:
        out = m.build_graph(params, matrix)
        preds.append(float(out.q.value[0, 0]))
        targets.append(conv.rating)
    try:
        return pearson(preds, targets)
    except UndefinedMetricError:
        return float("nan")


def train(
    variant: str,
    train_set: Sequence[Conversation],
    dev_set: Sequence[Conversation],
    embeddings: EmbeddingTable,
    config: TrainConfig,
    init: m.ModelParams | None = None,
    hidden_dim: int = 200,
) -> TrainedModel:
    """Fit a variant to (conversation, rating) pairs.

    `init` warm-starts from an existing model (finetuning); its architecture
    must agree with `variant` and the embedding table. Without init, the
    rating bias starts at the mean training rating so the regression begins
    centered on the target scale.
    """
    config.validate()
    if not train_set:
        raise ContractError("training set is empty")

    train_prep = _prepare(train_set, embeddings)
    dev_prep = _prepare(dev_set, embeddings) if dev_set else []

    if init is not None:
        if init.variant != variant:
            raise ContractError(
                f"warm start variant {init.variant!r} does not match requested {variant!r}"
            )
        if init.embed_dim != embeddings.dim:
            raise DimensionError(
                f"warm start embed_dim {init.embed_dim} does not match "
                f"embedding table dim {embeddings.dim}"
            )
        params = init.copy()
    else:
        mean_rating = float(np.mean([c.rating for c in train_set]))
        init_seed = int(named_stream(config.seed, "init").integers(0, 2**31))
        params = m.initialize_params(
            variant, embeddings.dim, hidden_dim, init_seed, rating_bias=mean_rating
        )

    shuffle_rng = named_stream(config.seed, "shuffle")
    dropout_rng = named_stream(config.seed, "dropout")
    state = AdamState()
    p_drop = config.dropout_embed

    history: list[EpochStats] = []
    best_params = params.copy()
    best_pearson = float("nan")
    best_epoch = 0
    since_best = 0
    n = len(train_prep)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = [train_prep[i] for i in order[start : start + config.batch_size]]
            param_nodes = {k: ad.leaf(v) for k, v in params.tensors.items()}

            if variant == "nara":
                per_conv = []
                for conv, matrix in batch:
                    mask = None
                    if p_drop > 0:
                        mask = (dropout_rng.random(matrix.shape) >= p_drop) / (1.0 - p_drop)
                    out = m.build_graph(params, matrix, mask, param_nodes)
                    target = np.full((matrix.shape[0], 1), conv.rating)
                    per_conv.append(ad.mse(out.preds, target))
                loss = ad.mean_all(ad.stack_rows(per_conv))
            else:
                q_nodes = []
                targets = np.empty((len(batch), 1))
                for bi, (conv, matrix) in enumerate(batch):
                    mask = None
                    if p_drop > 0:
                        mask = (dropout_rng.random(matrix.shape) >= p_drop) / (1.0 - p_drop)
                    out = m.build_graph(params, matrix, mask, param_nodes)
                    q_nodes.append(out.q)
                    targets[bi, 0] = conv.rating
                loss = ad.mse(ad.stack_rows(q_nodes), targets)

            loss_value = float(loss.value[0, 0])
            if not math.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {start // config.batch_size}"
                )
            ad.backward(loss)
            grads = {k: node.grad for k, node in param_nodes.items()}
            params.tensors = adam_step(params.tensors, grads, state, config)
            loss_sum += loss_value * len(batch)

        train_loss = loss_sum / n
        dev_p = _dev_pearson(params, dev_prep)
        history.append(EpochStats(epoch, train_loss, dev_p))

        if math.isfinite(dev_p) and (math.isnan(best_pearson) or dev_p > best_pearson):
            best_pearson = dev_p
            best_params = params.copy()
            best_epoch = epoch
            since_best = 0
        elif math.isfinite(best_pearson):
            # early stopping engages only once a defined dev value exists
            since_best += 1
            if since_best >= config.patience:
                break

    if not math.isfinite(best_pearson):
        best_params = params.copy()
        best_epoch = history[-1].epoch if history else 0
    return TrainedModel(best_params, best_pearson, best_epoch, history)
