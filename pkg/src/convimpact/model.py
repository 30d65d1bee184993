"""Model variants mapping utterance embeddings to quality predictions.

Four variants share the same outer structure: contextualize the utterance
embeddings, apply a rating head and a sigmoid-bounded weight head, and
aggregate per-utterance ratings into one conversation quality value by a
weighted mean. The nara baseline instead regresses every utterance directly
and averages.

    ara    identity contextualizer
    ara-o  bidirectional LSTM, forward/backward states concatenated
    ara-a  single-head self-attention block with residuals (no positional
           encoding, no layer normalization)
    nara   bidirectional LSTM into a fully connected head, one score per
           utterance

A ModelParams value is immutable after training; forward() is a pure
function and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import (
    ContractError,
    DimensionError,
    EmptySequenceError,
    FormatError,
)

VARIANTS = ("ara", "ara-o", "ara-a", "nara")

MODEL_FORMAT_VERSION = 1

# LSTM gate packing order within the fused weight matrices.
_GATES = ("input", "forget", "candidate", "output")


@dataclass
class ModelParams:
    variant: str
    embed_dim: int
    hidden_dim: int
    seed: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def ctx_dim(self) -> int:
        """Width of the contextualized utterance representation."""
        if self.variant in ("ara", "ara-a"):
            return self.embed_dim
        return self.hidden_dim

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.variant,
            self.embed_dim,
            self.hidden_dim,
            self.seed,
            {k: v.copy() for k, v in self.tensors.items()},
        )


@dataclass
class UtteranceRow:
    index: int
    r: float
    w: float
    s: float


@dataclass
class ImpactReport:
    conversation_id: str
    q: float
    rows: list[UtteranceRow]


def _check_variant(variant: str):
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}, expected one of {VARIANTS}")


def _check_recurrent_dims(variant: str, hidden_dim: int):
    if variant in ("ara-o", "nara") and hidden_dim % 2 != 0:
        raise ContractError(
            f"{variant} splits hidden_dim across two directions; "
            f"{hidden_dim} is not even"
        )


def _xavier(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def initialize_params(
    variant: str,
    embed_dim: int,
    hidden_dim: int,
    seed: int,
    rating_bias: float = 0.0,
) -> ModelParams:
    """Fresh parameters: Xavier-uniform matrices, zero biases and heads.

    Exceptions to zero biases: LSTM forget gates start at 1.0 for stable
    early training, and rating_bias seeds the rating (or nara output) bias,
    typically with the mean training rating so the regression starts
    centered on the target scale. The output heads start at zero so early
    predictions carry no random projection noise; at the small learning
    rates this family trains with, a random head direction would otherwise
    dominate predictions for the whole run.
    """
    _check_variant(variant)
    _check_recurrent_dims(variant, hidden_dim)
    if embed_dim < 1 or hidden_dim < 1:
        raise ContractError("embed_dim and hidden_dim must be positive")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A17]))
    t: dict[str, np.ndarray] = {}

    def lstm_block(prefix: str, in_dim: int, h: int):
        t[f"{prefix}_wx"] = _xavier(rng, in_dim, 4 * h)
        t[f"{prefix}_wh"] = _xavier(rng, h, 4 * h)
        b = np.zeros((1, 4 * h))
        b[0, h : 2 * h] = 1.0  # forget gate slice
        t[f"{prefix}_b"] = b

    if variant in ("ara-o", "nara"):
        half = hidden_dim // 2
        lstm_block("lstm_fw", embed_dim, half)
        lstm_block("lstm_bw", embed_dim, half)
    elif variant == "ara-a":
        for name in ("attn_wq", "attn_wk", "attn_wv"):
            t[name] = _xavier(rng, embed_dim, embed_dim)
        t["ff_w1"] = _xavier(rng, embed_dim, hidden_dim)
        t["ff_b1"] = np.zeros((1, hidden_dim))
        t["ff_w2"] = _xavier(rng, hidden_dim, embed_dim)
        t["ff_b2"] = np.zeros((1, embed_dim))

    ctx = hidden_dim if variant in ("ara-o", "nara") else embed_dim
    if variant == "nara":
        t["out_w"] = np.zeros((ctx, 1))
        t["out_b"] = np.array([[float(rating_bias)]])
    else:
        t["rating_w"] = np.zeros((ctx, 1))
        t["rating_b"] = np.array([[float(rating_bias)]])
        t["weight_w"] = np.zeros((ctx, 1))
        t["weight_b"] = np.zeros((1, 1))

    return ModelParams(variant, embed_dim, hidden_dim, seed, t)


def _stack_embeddings(embeddings, embed_dim: int) -> np.ndarray:
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"embeddings must form an (N,d) matrix, got {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptySequenceError("conversation has no utterances")
    if arr.shape[1] != embed_dim:
        raise DimensionError(
            f"embedding dimension {arr.shape[1]} does not match model embed_dim {embed_dim}"
        )
    return np.ascontiguousarray(arr)


def _lstm_direction(pn: dict[str, ad.Node], xs: list[ad.Node], prefix: str, half: int):
    wx, wh, b = pn[f"{prefix}_wx"], pn[f"{prefix}_wh"], pn[f"{prefix}_b"]
    h = ad.leaf(np.zeros((1, half)))
    c = ad.leaf(np.zeros((1, half)))
    states = []
    for x in xs:
        z = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h, wh)), b)
        gate_i = ad.sigmoid(ad.slice_cols(z, 0, half))
        gate_f = ad.sigmoid(ad.slice_cols(z, half, 2 * half))
        cand = ad.tanh(ad.slice_cols(z, 2 * half, 3 * half))
        gate_o = ad.sigmoid(ad.slice_cols(z, 3 * half, 4 * half))
        c = ad.add(ad.mul(gate_f, c), ad.mul(gate_i, cand))
        h = ad.mul(gate_o, ad.tanh(c))
        states.append(h)
    return states


def _bilstm(pn: dict[str, ad.Node], u: ad.Node, hidden_dim: int) -> ad.Node:
    half = hidden_dim // 2
    n = u.value.shape[0]
    xs = [ad.take_row(u, i) for i in range(n)]
    fw = _lstm_direction(pn, xs, "lstm_fw", half)
    bw = list(reversed(_lstm_direction(pn, list(reversed(xs)), "lstm_bw", half)))
    return ad.concat_cols(ad.stack_rows(fw), ad.stack_rows(bw))


def _attention_block(pn: dict[str, ad.Node], u: ad.Node, embed_dim: int) -> ad.Node:
    q = ad.matmul(u, pn["attn_wq"])
    k = ad.matmul(u, pn["attn_wk"])
    v = ad.matmul(u, pn["attn_wv"])
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(embed_dim))
    attended = ad.matmul(ad.softmax_rows(scores), v)
    mixed = ad.add(u, attended)
    inner = ad.tanh(ad.add_rowvec(ad.matmul(mixed, pn["ff_w1"]), pn["ff_b1"]))
    projected = ad.add_rowvec(ad.matmul(inner, pn["ff_w2"]), pn["ff_b2"])
    return ad.add(mixed, projected)


def _contextualize_node(params: ModelParams, pn: dict[str, ad.Node], u: ad.Node) -> ad.Node:
    if params.variant == "ara":
        return u
    if params.variant in ("ara-o", "nara"):
        return _bilstm(pn, u, params.hidden_dim)
    return _attention_block(pn, u, params.embed_dim)


@dataclass
class GraphOutputs:
    """Live graph handles for one conversation forward pass."""

    param_nodes: dict[str, ad.Node]
    ctx: ad.Node
    q: ad.Node
    ratings: ad.Node | None = None  # (N,1), absent for nara
    weights: ad.Node | None = None  # (N,1), absent for nara
    preds: ad.Node | None = None  # (N,1), nara only


def build_graph(
    params: ModelParams,
    embeddings,
    dropout_mask: np.ndarray | None = None,
    param_nodes: dict[str, ad.Node] | None = None,
) -> GraphOutputs:
    """Assemble the forward graph for one conversation.

    dropout_mask, when given, multiplies the raw embedding matrix (inverted
    dropout scaling is baked into the mask by the caller). param_nodes lets
    a training step share one set of leaf nodes across a batch so gradients
    accumulate.
    """
    mat = _stack_embeddings(embeddings, params.embed_dim)
    if param_nodes is None:
        param_nodes = {k: ad.leaf(v) for k, v in params.tensors.items()}
    u = ad.leaf(mat)
    if dropout_mask is not None:
        u = ad.mul_mask(u, dropout_mask)

    ctx = _contextualize_node(params, param_nodes, u)
    if params.variant == "nara":
        preds = ad.add_bias(ad.matmul(ctx, param_nodes["out_w"]), param_nodes["out_b"])
        q = ad.mean_all(preds)
        return GraphOutputs(param_nodes, ctx, q, preds=preds)

    r = ad.add_bias(ad.matmul(ctx, param_nodes["rating_w"]), param_nodes["rating_b"])
    w = ad.sigmoid(
        ad.add_bias(ad.matmul(ctx, param_nodes["weight_w"]), param_nodes["weight_b"])
    )
    q = ad.weighted_mean(r, w)
    return GraphOutputs(param_nodes, ctx, q, ratings=r, weights=w)


def contextualize(params: ModelParams, embeddings) -> list[np.ndarray]:
    """Contextualized representation of each utterance, as plain vectors."""
    out = build_graph(params, embeddings)
    return [out.ctx.value[i].copy() for i in range(out.ctx.value.shape[0])]


def forward(params: ModelParams, embeddings, conversation_id: str = "") -> ImpactReport:
    """Score one conversation: per-utterance (r, w, s) plus predicted quality q.

    For nara the per-utterance prediction doubles as the rating with weight
    fixed at 1.0, and q is the unweighted mean of predictions.
    """
    out = build_graph(params, embeddings)
    rows = []
    if params.variant == "nara":
        for i, p in enumerate(out.preds.value[:, 0]):
            p = float(p)
            rows.append(UtteranceRow(i, p, 1.0, p * 1.0))
    else:
        for i, (r, w) in enumerate(zip(out.ratings.value[:, 0], out.weights.value[:, 0])):
            r, w = float(r), float(w)
            rows.append(UtteranceRow(i, r, w, r * w))
    return ImpactReport(conversation_id, float(out.q.value[0, 0]), rows)


def nara_forward(params: ModelParams, embeddings) -> list[float]:
    """Per-utterance predicted scores from the nara baseline."""
    if params.variant != "nara":
        raise ContractError(f"nara_forward requires a nara model, got {params.variant!r}")
    out = build_graph(params, embeddings)
    return [float(v) for v in out.preds.value[:, 0]]


def impact_scores(report: ImpactReport) -> list[tuple[int, float]]:
    """(index, s) pairs in utterance order."""
    return [(row.index, row.s) for row in report.rows]


def write_reports(path, reports: Sequence[ImpactReport]):
    """Impact reports as JSON Lines, one conversation per line."""
    with open(path, "w", encoding="utf-8") as f:
        for rep in reports:
            doc = {
                "conversation_id": rep.conversation_id,
                "q": rep.q,
                "utterances": [
                    {"index": row.index, "r": row.r, "w": row.w, "s": row.s}
                    for row in rep.rows
                ],
            }
            f.write(json.dumps(doc))
            f.write("\n")


def read_reports(path) -> list[ImpactReport]:
    reports = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {e}") from e
            rows = [
                UtteranceRow(u["index"], u["r"], u["w"], u["s"])
                for u in doc["utterances"]
            ]
            reports.append(ImpactReport(doc["conversation_id"], doc["q"], rows))
    return reports


def save_params(params: ModelParams, path):
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "variant": params.variant,
        "embed_dim": params.embed_dim,
        "hidden_dim": params.hidden_dim,
        "seed": params.seed,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in sorted(params.tensors.items())
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_params(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON: {e}") from e
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported format_version {version!r}, expected {MODEL_FORMAT_VERSION}"
        )
    variant = doc.get("variant")
    _check_variant(variant)
    tensors = {}
    for name, spec in doc["params"].items():
        shape = tuple(spec["shape"])
        arr = np.array(spec["data"], dtype=np.float64).reshape(shape)
        if not np.isfinite(arr).all():
            raise FormatError(f"{path}: tensor {name!r} contains non-finite values")
        tensors[name] = arr
    return ModelParams(
        variant,
        int(doc["embed_dim"]),
        int(doc["hidden_dim"]),
        int(doc["seed"]),
        tensors,
    )
