"""Review-pair construction for the model-led evaluation workflow.

Low-scored utterances (bottom percentile of impact scores) form the issue
pool. k-means over their pretrained embeddings picks k diverse candidates
(one representative per cluster, the utterance nearest each centroid). Each
sampled issue is paired with a non-issue drawn uniformly from the upper
pool, contexts are attached, and the intra-pair presentation order is
randomized so judges stay blind to the model's preference. The key mapping
pair ids to the model-low member is written separately from the
presentation document.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Conversation, EmbeddingTable
from .errors import ContractError, DegenerateEvaluationError
from .model import ImpactReport
from .seeding import named_stream


def percentile_cutoff(scores: Sequence[float], pct: float = 5.0) -> float:
    """Nearest-rank percentile: the value at ceil(pct/100 * n), ascending.

    Scores at or below the returned threshold form the issue pool. Warns
    when the threshold swallows every score (degenerate distribution).
    """
    if len(scores) == 0:
        raise DegenerateEvaluationError("percentile_cutoff: no scores")
    if not 0.0 < pct < 100.0:
        raise ContractError(f"percentile must lie strictly inside (0, 100), got {pct}")
    ordered = sorted(float(s) for s in scores)
    rank = max(1, int(np.ceil(pct / 100.0 * len(ordered))))
    threshold = ordered[rank - 1]
    if ordered[-1] <= threshold:
        warnings.warn(
            "degenerate score distribution: every utterance falls at or below "
            f"the {pct} percentile threshold {threshold}",
            RuntimeWarning,
            stacklevel=2,
        )
    return threshold


def issue_cluster_count(n_issues: int, k_fraction: float = 0.01) -> int:
    """Number of diversity clusters: max(1, round(k_fraction * pool size))."""
    if n_issues < 1:
        raise ContractError("issue pool is empty")
    if not 0.0 < k_fraction <= 1.0:
        raise ContractError(f"k_fraction must lie in (0, 1], got {k_fraction}")
    return max(1, round(k_fraction * n_issues))


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n,)
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) matrix of squared Euclidean distances
    p2 = (points * points).sum(axis=1)[:, None]
    c2 = (centroids * centroids).sum(axis=1)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centroids.T, 0.0)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass at distance zero; fall back to uniform
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, seed: int, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding, deterministic per seed.

    Converges when assignments stop changing; empty clusters are re-seeded
    from the point farthest from its assigned centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ContractError(f"points must form an (n, d) matrix, got shape {pts.shape}")
    n = pts.shape[0]
    if k < 1:
        raise ContractError("k must be positive")
    if k > n:
        raise ContractError(f"k = {k} exceeds the number of points n = {n}")

    rng = named_stream(seed, "kmeans")
    centroids = _kmeans_pp_init(pts, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        d2 = _squared_distances(pts, centroids)
        new_assign = d2.argmin(axis=1)

        # re-seed empty clusters from the farthest point
        point_d2 = d2[np.arange(n), new_assign]
        for c in range(k):
            if not (new_assign == c).any():
                far = int(point_d2.argmax())
                centroids[c] = pts[far]
                d2 = _squared_distances(pts, centroids)
                new_assign = d2.argmin(axis=1)
                point_d2 = d2[np.arange(n), new_assign]

        history.append(float(point_d2.sum()))
        if (new_assign == assignments).all():
            break
        assignments = new_assign
        for c in range(k):
            members = pts[assignments == c]
            if len(members):
                centroids[c] = members.mean(axis=0)

    d2 = _squared_distances(pts, centroids)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignments].sum())
    return KMeansResult(centroids, assignments, inertia, n_iter, history)


@dataclass
class ContextLine:
    index: int
    speaker: str
    text: str
    is_focus: bool = False


@dataclass
class PairMember:
    utterance_id: str
    conversation_id: str
    index: int
    text: str
    context: list[ContextLine] = field(default_factory=list)


@dataclass
class ReviewPair:
    pair_id: str
    member_a: PairMember
    member_b: PairMember
    low_member: str  # "a" | "b" -- kept out of the presentation document


def extract_context(conversation: Conversation, utterance_index: int) -> list[ContextLine]:
    """Window of up to 2 preceding and 1 following utterances, plus the focus.

    Truncated silently at conversation boundaries.
    """
    n = len(conversation.utterances)
    if not 0 <= utterance_index < n:
        raise ContractError(
            f"utterance index {utterance_index} out of range for conversation "
            f"{conversation.id!r} with {n} utterances"
        )
    lines = []
    for i in range(max(0, utterance_index - 2), min(n, utterance_index + 2)):
        u = conversation.utterances[i]
        lines.append(ContextLine(i, u.speaker, u.text, i == utterance_index))
    return lines


@dataclass
class _Candidate:
    utterance_id: str
    conversation: Conversation
    index: int
    score: float


def _member(c: _Candidate) -> PairMember:
    return PairMember(
        c.utterance_id,
        c.conversation.id,
        c.index,
        c.conversation.utterances[c.index].text,
        extract_context(c.conversation, c.index),
    )


def sample_pairs(
    conversations: Sequence[Conversation],
    reports: Sequence[ImpactReport],
    embeddings: EmbeddingTable,
    n_pairs: int,
    pct: float = 5.0,
    k_fraction: float = 0.01,
    seed: int = 0,
) -> list[ReviewPair]:
    """Build blind review pairs from scored conversations.

    k = max(1, round(k_fraction * |issue pool|)) clusters are fit on the
    issue pool's pretrained embeddings; the utterance nearest each centroid
    becomes a candidate. No utterance id appears twice across the batch.
    """
    if n_pairs < 1:
        raise ContractError("n_pairs must be positive")
    conv_map = {c.id: c for c in conversations}
    pool: list[_Candidate] = []
    for report in reports:
        conv = conv_map.get(report.conversation_id)
        if conv is None:
            raise ContractError(
                f"scored conversation {report.conversation_id!r} missing from dataset"
            )
        for row in report.rows:
            pool.append(
                _Candidate(conv.utterance_id(row.index), conv, row.index, row.s)
            )
    if not pool:
        raise DegenerateEvaluationError("no scored utterances to sample from")

    threshold = percentile_cutoff([c.score for c in pool], pct)
    issues = [c for c in pool if c.score <= threshold]
    non_issues = [c for c in pool if c.score > threshold]
    if not non_issues:
        raise DegenerateEvaluationError(
            "non-issue pool is empty; score distribution is degenerate"
        )

    k = issue_cluster_count(len(issues), k_fraction)
    issue_matrix = np.stack([embeddings.lookup(c.utterance_id) for c in issues])
    clusters = kmeans(issue_matrix, k, seed)

    candidates: list[_Candidate] = []
    taken: set[int] = set()
    for c in range(k):
        members = np.flatnonzero(clusters.assignments == c)
        members = [i for i in members if i not in taken]
        if not members:
            continue
        d2 = ((issue_matrix[members] - clusters.centroids[c]) ** 2).sum(axis=1)
        nearest = members[int(d2.argmin())]
        taken.add(nearest)
        candidates.append(issues[nearest])

    if n_pairs > len(candidates):
        raise ContractError(
            f"n_pairs = {n_pairs} exceeds the {len(candidates)} diverse issue "
            "candidates; lower n_pairs or raise k_fraction"
        )
    if n_pairs > len(non_issues):
        raise ContractError(
            f"n_pairs = {n_pairs} exceeds the non-issue pool size {len(non_issues)}"
        )

    pick_rng = named_stream(seed, "pair-sampling")
    order_rng = named_stream(seed, "pair-order")
    issue_picks = [candidates[i] for i in pick_rng.choice(len(candidates), n_pairs, replace=False)]
    non_issue_picks = [
        non_issues[i] for i in pick_rng.choice(len(non_issues), n_pairs, replace=False)
    ]

    pairs = []
    for i, (issue, non_issue) in enumerate(zip(issue_picks, non_issue_picks)):
        issue_first = bool(order_rng.random() < 0.5)
        a, b = (issue, non_issue) if issue_first else (non_issue, issue)
        pairs.append(
            ReviewPair(
                f"pair-{i:04d}",
                _member(a),
                _member(b),
                "a" if issue_first else "b",
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# pair batch files: presentation (no scores) + sealed key, both JSON Lines


def write_pair_files(pairs: Sequence[ReviewPair], presentation_path, key_path):
    def member_doc(mem: PairMember) -> dict:
        return {
            "utterance_id": mem.utterance_id,
            "conversation_id": mem.conversation_id,
            "index": mem.index,
            "text": mem.text,
            "context": [
                {
                    "index": line.index,
                    "speaker": line.speaker,
                    "text": line.text,
                    "is_focus": line.is_focus,
                }
                for line in mem.context
            ],
        }

    with open(presentation_path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(
                json.dumps(
                    {"pair_id": p.pair_id, "a": member_doc(p.member_a), "b": member_doc(p.member_b)},
                    ensure_ascii=False,
                )
            )
            f.write("\n")

    with open(key_path, "w", encoding="utf-8") as f:
        for p in pairs:
            low = p.member_a if p.low_member == "a" else p.member_b
            high = p.member_b if p.low_member == "a" else p.member_a
            f.write(
                json.dumps(
                    {
                        "pair_id": p.pair_id,
                        "low_member": p.low_member,
                        "low_utterance_id": low.utterance_id,
                        "high_utterance_id": high.utterance_id,
                    }
                )
            )
            f.write("\n")


def load_key(path) -> dict[str, dict]:
    key = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                obj = json.loads(line)
                key[obj["pair_id"]] = obj
    return key


def load_judgments(path) -> dict[str, str]:
    """pair_id -> "a"|"b", the member the judge found worse."""
    judgments = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            choice = obj.get("choice")
            if choice not in ("a", "b"):
                raise ContractError(
                    f"{path}: judgment for {obj.get('pair_id')!r} must choose 'a' or 'b'"
                )
            judgments[obj["pair_id"]] = choice
    return judgments
