"""Dataset ingestion, preprocessing, splitting, embedding files, synthetics.

Conversations travel as JSON Lines, one conversation per line:

    {"id": str, "rating": number|null,
     "utterances": [{"speaker": "user"|"system", "text": str,
                     "label": "good"|"bad"|null}]}

Embeddings travel as a little-endian binary file (magic UEB1): u32 dim,
u64 count, then per entry a u32 id byte length, the UTF-8 id, and dim
float32 components. Utterance ids follow <conversation_id>:<index> with the
index taken after preprocessing.
"""

from __future__ import annotations

import json
import struct
import unicodedata
from dataclasses import dataclass, field, replace
from importlib import resources as importlib_resources
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DataIntegrityError, FormatError

SPEAKERS = ("user", "system")
LABELS = ("good", "bad")
PROFILES = ("ap19", "convai", "none")

_UEB_MAGIC = b"UEB1"

# Apostrophes survive punctuation stripping when both neighbours are
# word characters ("don't" stays intact, quoting marks go).
_APOSTROPHES = ("'", "’")


@dataclass
class Utterance:
    speaker: str
    text: str
    label: str | None = None


@dataclass
class Conversation:
    id: str
    rating: float | None
    utterances: list[Utterance] = field(default_factory=list)

    def utterance_id(self, index: int) -> str:
        return f"{self.id}:{index}"


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self.entries

    def lookup(self, utterance_id: str) -> np.ndarray:
        try:
            return self.entries[utterance_id]
        except KeyError:
            raise DataIntegrityError(
                f"no embedding for utterance {utterance_id!r}"
            ) from None

    def add(self, utterance_id: str, vector: np.ndarray):
        if utterance_id in self.entries:
            raise DataIntegrityError(f"duplicate embedding id {utterance_id!r}")
        vec = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vec.shape[0] != self.dim:
            raise DataIntegrityError(
                f"embedding for {utterance_id!r} has {vec.shape[0]} components, "
                f"table dim is {self.dim}"
            )
        if not np.isfinite(vec).all():
            raise DataIntegrityError(
                f"embedding for {utterance_id!r} has non-finite components"
            )
        self.entries[utterance_id] = vec

    def conversation_matrix(self, conversation: Conversation) -> np.ndarray:
        """(N, dim) matrix of this conversation's utterance embeddings."""
        rows = [
            self.lookup(conversation.utterance_id(i))
            for i in range(len(conversation.utterances))
        ]
        return np.ascontiguousarray(np.stack(rows))


# ---------------------------------------------------------------------------
# conversation JSONL


def _parse_conversation(obj, where: str) -> Conversation:
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: conversation record must be an object")
    conv_id = obj.get("id")
    if not isinstance(conv_id, str) or not conv_id:
        raise FormatError(f"{where}: missing or empty conversation id")
    rating = obj.get("rating")
    if rating is not None:
        rating = float(rating)
    raw_utts = obj.get("utterances")
    if not isinstance(raw_utts, list):
        raise FormatError(f"{where}: conversation {conv_id!r} has no utterance list")
    utterances = []
    for j, u in enumerate(raw_utts):
        speaker = u.get("speaker")
        if speaker not in SPEAKERS:
            raise FormatError(
                f"{where}: utterance {j} of {conv_id!r} has speaker {speaker!r}"
            )
        text = u.get("text")
        if not isinstance(text, str):
            raise FormatError(f"{where}: utterance {j} of {conv_id!r} has no text")
        label = u.get("label")
        if label is not None and label not in LABELS:
            raise FormatError(
                f"{where}: utterance {j} of {conv_id!r} has label {label!r}"
            )
        utterances.append(Utterance(speaker, text, label))
    return Conversation(conv_id, rating, utterances)


def load_conversations(path) -> list[Conversation]:
    conversations = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {e}") from e
            conv = _parse_conversation(obj, f"{path}:{lineno}")
            if conv.id in seen:
                raise DataIntegrityError(f"{path}: duplicate conversation id {conv.id!r}")
            seen.add(conv.id)
            conversations.append(conv)
    return conversations


def write_conversations(path, conversations: Iterable[Conversation]):
    with open(path, "w", encoding="utf-8") as f:
        for conv in conversations:
            doc = {
                "id": conv.id,
                "rating": conv.rating,
                "utterances": [
                    {"speaker": u.speaker, "text": u.text, "label": u.label}
                    for u in conv.utterances
                ],
            }
            f.write(json.dumps(doc, ensure_ascii=False))
            f.write("\n")


# ---------------------------------------------------------------------------
# preprocessing


def load_symbol_lexicon(path=None) -> dict[str, str]:
    """symbol -> replacement map, one tab-separated pair per line."""
    if path is None:
        ref = importlib_resources.files("convimpact.resources") / "symbol_lexicon.tsv"
        text = ref.read_text(encoding="utf-8")
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    lexicon = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise FormatError(f"symbol lexicon line {lineno}: expected symbol<TAB>replacement")
        symbol, replacement = line.split("\t", 1)
        lexicon[symbol.strip().lower()] = replacement.strip()
    return lexicon


_DEFAULT_LEXICON: dict[str, str] | None = None


def _default_lexicon() -> dict[str, str]:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = load_symbol_lexicon()
    return _DEFAULT_LEXICON


def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punctuation(token: str) -> str:
    out = []
    for i, ch in enumerate(token):
        if not _is_punctuation(ch):
            out.append(ch)
            continue
        if ch in _APOSTROPHES and 0 < i < len(token) - 1:
            if token[i - 1].isalnum() and token[i + 1].isalnum():
                out.append(ch)
    return "".join(out)


def strip_punctuation_text(text: str) -> str:
    """Remove punctuation (keeping intra-word apostrophes), normalize spaces."""
    tokens = [_strip_punctuation(tok) for tok in text.split()]
    return " ".join(t for t in tokens if t)


def convert_symbols_text(text: str, lexicon: dict[str, str] | None = None) -> str:
    """Replace emoticons/abbreviations with words, then strip punctuation."""
    lexicon = lexicon if lexicon is not None else _default_lexicon()
    out: list[str] = []
    for token in text.split():
        key = token.lower()
        if key in lexicon:
            out.extend(lexicon[key].split())
            continue
        stripped = _strip_punctuation(token)
        key = stripped.lower()
        if key in lexicon:
            out.extend(lexicon[key].split())
        elif stripped:
            out.append(stripped)
    return " ".join(out)


def _merge_same_speaker(utterances: list[Utterance]) -> list[Utterance]:
    merged: list[Utterance] = []
    for utt in utterances:
        if merged and merged[-1].speaker == utt.speaker:
            prev = merged[-1]
            texts = [t for t in (prev.text, utt.text) if t]
            # pessimistic label merge: an issue never disappears
            if "bad" in (prev.label, utt.label):
                label = "bad"
            elif "good" in (prev.label, utt.label):
                label = "good"
            else:
                label = None
            merged[-1] = Utterance(prev.speaker, " ".join(texts), label)
        else:
            merged.append(replace(utt))
    return merged


def preprocess(
    conversation: Conversation,
    profile: str,
    lexicon: dict[str, str] | None = None,
) -> Conversation:
    """Apply a preprocessing profile; idempotent and total for all profiles.

    ap19: strip punctuation. convai: convert symbols to words, strip what
    remains, then concatenate consecutive same-speaker utterances. none:
    identity.
    """
    if profile not in PROFILES:
        raise ContractError(f"unknown preprocessing profile {profile!r}")
    if profile == "none":
        return conversation
    if profile == "ap19":
        utts = [
            Utterance(u.speaker, strip_punctuation_text(u.text), u.label)
            for u in conversation.utterances
        ]
        return Conversation(conversation.id, conversation.rating, utts)
    utts = [
        Utterance(u.speaker, convert_symbols_text(u.text, lexicon), u.label)
        for u in conversation.utterances
    ]
    return Conversation(conversation.id, conversation.rating, _merge_same_speaker(utts))


def filter_min_utterances(
    conversations: Sequence[Conversation], min_utterances: int
) -> list[Conversation]:
    """Drop conversations shorter than the cutoff (5 for ap19-style data)."""
    return [c for c in conversations if len(c.utterances) >= min_utterances]


# ---------------------------------------------------------------------------
# splitting


def split(
    conversations: Sequence[Conversation],
    dev_count: int,
    test_count: int,
    seed: int,
) -> tuple[list[Conversation], list[Conversation], list[Conversation]]:
    """Seeded shuffle then partition into (train, dev, test).

    The shuffle uses numpy's PCG64 stream, so identical seeds give identical
    splits on every platform.
    """
    n = len(conversations)
    if dev_count < 0 or test_count < 0:
        raise ContractError("split counts must be non-negative")
    if dev_count + test_count >= n and n > 0:
        raise ContractError(
            f"dev_count + test_count = {dev_count + test_count} "
            f"must be smaller than the dataset size {n}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    order = rng.permutation(n)
    shuffled = [conversations[i] for i in order]
    dev = shuffled[:dev_count]
    test = shuffled[dev_count : dev_count + test_count]
    train = shuffled[dev_count + test_count :]
    return train, dev, test


# ---------------------------------------------------------------------------
# embedding files (UEB1)


def write_embeddings(path, table: EmbeddingTable):
    with open(path, "wb") as f:
        f.write(_UEB_MAGIC)
        f.write(struct.pack("<I", table.dim))
        f.write(struct.pack("<Q", len(table.entries)))
        for utterance_id, vec in table.entries.items():
            raw = utterance_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(
            f"truncated embedding file: wanted {n} bytes for {what} "
            f"at byte offset {f.tell() - len(data)}"
        )
    return data


def read_embeddings(path) -> EmbeddingTable:
    """Parse and validate a UEB1 file; vectors come back as float64."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _UEB_MAGIC:
            raise FormatError(
                f"{path}: bad magic {magic!r}, expected {_UEB_MAGIC!r}"
            )
        (dim,) = struct.unpack("<I", _read_exact(f, 4, "dim"))
        if dim == 0:
            raise FormatError(f"{path}: embedding dim must be positive")
        (count,) = struct.unpack("<Q", _read_exact(f, 8, "count"))
        table = EmbeddingTable(dim=int(dim))
        for i in range(count):
            (id_len,) = struct.unpack("<I", _read_exact(f, 4, f"id length of entry {i}"))
            utterance_id = _read_exact(f, id_len, f"id of entry {i}").decode("utf-8")
            raw = _read_exact(f, 4 * dim, f"vector of entry {i}")
            vec = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            if utterance_id in table.entries:
                raise DataIntegrityError(f"{path}: duplicate embedding id {utterance_id!r}")
            if not np.isfinite(vec).all():
                raise DataIntegrityError(
                    f"{path}: embedding {utterance_id!r} has non-finite components"
                )
            table.entries[utterance_id] = vec
        trailing = f.read(1)
        if trailing:
            raise FormatError(
                f"{path}: trailing data after {count} entries at byte offset {f.tell() - 1}"
            )
    return table


# ---------------------------------------------------------------------------
# synthetic datasets with planted impacts


@dataclass
class SyntheticSpec:
    """Recipe for a dataset whose per-utterance impacts are known.

    Prototype vectors are a random orthonormal frame on the unit sphere;
    every utterance is a noisy copy of one prototype and inherits that
    prototype's planted impact. A conversation's rating is the mean planted
    impact plus Gaussian noise, clamped to [1, 5].

    The lowest-impact prototype plays the role of a rare issue: it carries
    a negative planted impact (a turn that actively damages the rating) and
    contaminates conversations independently at issue_prevalence. The
    remaining prototypes are ordinary topics spanning the rating scale,
    mixed per conversation through a skewed Dirichlet so ratings vary
    enough for the relationship to be recoverable.
    """

    n_conversations: int = 2000
    min_len: int = 5
    max_len: int = 20
    embed_dim: int = 16
    n_prototypes: int = 8
    impacts: tuple[float, ...] | None = None  # default: -2 issue + ladder on [1, 5]
    noise_sigma: float = 0.25
    perturbation_sigma: float = 0.05
    mixture_alpha: float = 0.25
    # per-utterance probability of drawing the issue prototype; issues are
    # rare in real logs, and a prevalence near the percentile cutoff keeps
    # the issue/non-issue pools honest
    issue_prevalence: float = 0.045
    seed: int = 0

    def resolved_impacts(self) -> np.ndarray:
        if self.impacts is not None:
            arr = np.asarray(self.impacts, dtype=np.float64)
            if arr.shape != (self.n_prototypes,):
                raise ContractError(
                    f"expected {self.n_prototypes} impact values, got {arr.shape}"
                )
            return arr
        regular = np.linspace(1.0, 5.0, self.n_prototypes - 1)
        return np.concatenate([[-2.0], regular])

    def validate(self):
        if self.n_prototypes < 2:
            raise ContractError("synthetic data needs at least 2 prototypes")
        if self.n_conversations < 1:
            raise ContractError("n_conversations must be positive")
        if not (1 <= self.min_len <= self.max_len):
            raise ContractError("need 1 <= min_len <= max_len")
        if self.embed_dim < 1:
            raise ContractError("embed_dim must be positive")
        if self.noise_sigma < 0 or self.perturbation_sigma < 0:
            raise ContractError("noise sigmas must be non-negative")
        if self.mixture_alpha <= 0:
            raise ContractError("mixture_alpha must be positive")
        if not 0.0 < self.issue_prevalence < 1.0:
            raise ContractError("issue_prevalence must lie strictly inside (0, 1)")


@dataclass
class UtteranceTruth:
    utterance_id: str
    impact: float
    prototype: int
    label: str | None


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[list[Conversation], EmbeddingTable, dict[str, UtteranceTruth]]:
    """Build (conversations, embeddings, ground truth) from a spec.

    Utterances of the lowest-impact prototype carry the "bad" label and
    those of the highest-impact prototype carry "good". Embeddings are
    rounded to float32 up front so writing and re-reading a UEB file is
    value-exact.
    """
    spec.validate()
    impacts = spec.resolved_impacts()
    lowest = int(np.argmin(impacts))
    highest = int(np.argmax(impacts))

    def stream(tag: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([spec.seed, tag]))

    proto_rng = stream(1)
    length_rng = stream(2)
    mixture_rng = stream(3)
    assign_rng = stream(4)
    perturb_rng = stream(5)
    rating_rng = stream(6)

    # a random orthonormal frame: every prototype is a unit vector, and the
    # mutual orthogonality keeps the recovery problem well conditioned
    gaussian = proto_rng.normal(size=(spec.embed_dim, spec.n_prototypes))
    frame, _ = np.linalg.qr(gaussian)
    prototypes = np.ascontiguousarray(frame.T[: spec.n_prototypes])

    conversations: list[Conversation] = []
    table = EmbeddingTable(dim=spec.embed_dim)
    truth: dict[str, UtteranceTruth] = {}

    # ordinary topics get a skewed per-conversation mixture; the issue
    # prototype strikes utterances independently instead, so it lands as
    # rare contamination inside otherwise normal conversations
    regular = [p for p in range(spec.n_prototypes) if p != lowest]

    for ci in range(spec.n_conversations):
        conv_id = f"synth-{ci:05d}"
        length = int(length_rng.integers(spec.min_len, spec.max_len + 1))
        mixture = mixture_rng.dirichlet(np.full(len(regular), spec.mixture_alpha))
        protos = assign_rng.choice(regular, size=length, p=mixture)
        contaminated = assign_rng.random(length) < spec.issue_prevalence
        protos = np.where(contaminated, lowest, protos)

        utterances = []
        planted = []
        for j, p in enumerate(protos):
            p = int(p)
            vec = prototypes[p] + perturb_rng.normal(
                scale=spec.perturbation_sigma, size=spec.embed_dim
            )
            vec = vec.astype(np.float32).astype(np.float64)
            utt_id = f"{conv_id}:{j}"
            table.add(utt_id, vec)
            if p == lowest:
                label = "bad"
            elif p == highest:
                label = "good"
            else:
                label = None
            speaker = "user" if j % 2 == 0 else "system"
            utterances.append(
                Utterance(speaker, f"synthetic turn {j} about topic {p}", label)
            )
            planted.append(float(impacts[p]))
            truth[utt_id] = UtteranceTruth(utt_id, float(impacts[p]), p, label)

        rating = float(np.mean(planted))
        if spec.noise_sigma > 0:
            rating += float(rating_rng.normal(scale=spec.noise_sigma))
        rating = float(min(5.0, max(1.0, rating)))
        conversations.append(Conversation(conv_id, rating, utterances))

    return conversations, table, truth


def write_truth(path, truth: dict[str, UtteranceTruth]):
    with open(path, "w", encoding="utf-8") as f:
        for t in truth.values():
            f.write(
                json.dumps(
                    {
                        "utterance_id": t.utterance_id,
                        "impact": t.impact,
                        "prototype": t.prototype,
                        "label": t.label,
                    }
                )
            )
            f.write("\n")


def load_truth(path) -> dict[str, UtteranceTruth]:
    truth = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            truth[obj["utterance_id"]] = UtteranceTruth(
                obj["utterance_id"], obj["impact"], obj["prototype"], obj.get("label")
            )
    return truth


# ---------------------------------------------------------------------------
# ConvAI release adapter

_CONVAI_LABEL_MAP = {0: None, 1: "good", 2: "bad"}


def import_convai(path, label_map: dict[int, str | None] | None = None) -> list[Conversation]:
    """Thin adapter from the public ConvAI release JSON to Conversation.

    Assumes the round-1 layout: a JSON array of dialogues with integer
    dialogId, a users list carrying userType, a thread of messages with
    per-message integer evaluation, and dialogue-level quality scores per
    user. The dialogue rating is the mean of the quality scores given.
    Message labels are mapped through label_map before any preprocessing or
    merging, so merged utterances keep their pessimistic label union.
    """
    label_map = label_map or _CONVAI_LABEL_MAP
    with open(path, "r", encoding="utf-8") as f:
        try:
            dialogues = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(dialogues, list):
        raise FormatError(f"{path}: expected a JSON array of dialogues")

    conversations = []
    for d in dialogues:
        dialog_id = str(d.get("dialogId"))
        user_types = {u.get("id"): u.get("userType", "") for u in d.get("users", [])}
        bots = {uid for uid, t in user_types.items() if "bot" in str(t).lower()}
        ordered_ids = list(user_types)
        qualities = [
            float(e["quality"])
            for e in d.get("evaluation", [])
            if e.get("quality") is not None and float(e["quality"]) > 0
        ]
        rating = float(np.mean(qualities)) if qualities else None
        utterances = []
        for msg in d.get("thread", []):
            uid = msg.get("userId")
            if bots:
                speaker = "system" if uid in bots else "user"
            else:
                speaker = "user" if ordered_ids and uid == ordered_ids[0] else "system"
            raw = msg.get("evaluation", 0)
            try:
                raw = int(raw)
            except (TypeError, ValueError):
                raw = 0
            label = label_map.get(raw)
            utterances.append(Utterance(speaker, str(msg.get("text", "")), label))
        conversations.append(Conversation(f"convai-{dialog_id}", rating, utterances))
    return conversations
