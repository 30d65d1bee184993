"""Text preprocessing, kept byte-identical to the consumer toolkit.

Three profiles: ap19 strips punctuation (intra-word apostrophes survive),
convai first maps emoticons and chat abbreviations to words via the symbol
lexicon, strips the remaining punctuation, and concatenates consecutive
same-speaker utterances; none is the identity. The shared golden vectors
under the toolkit's tests/goldens/ pin the exact behavior.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field, replace
from importlib import resources as importlib_resources

PROFILES = ("ap19", "convai", "none")
SPEAKERS = ("user", "system")

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


class ExporterError(Exception):
    pass


def load_conversations(path) -> list[Conversation]:
    conversations = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise ExporterError(f"{path}:{lineno}: invalid JSON: {e}") from e
            conv_id = doc.get("id")
            if not isinstance(conv_id, str) or not conv_id:
                raise ExporterError(f"{path}:{lineno}: missing conversation id")
            if conv_id in seen:
                raise ExporterError(f"{path}: duplicate conversation id {conv_id!r}")
            seen.add(conv_id)
            utterances = []
            for j, u in enumerate(doc.get("utterances", [])):
                if u.get("speaker") not in SPEAKERS:
                    raise ExporterError(
                        f"{path}:{lineno}: utterance {j} has speaker {u.get('speaker')!r}"
                    )
                utterances.append(Utterance(u["speaker"], u.get("text", ""), u.get("label")))
            conversations.append(Conversation(conv_id, doc.get("rating"), utterances))
    return conversations


def load_symbol_lexicon(path=None) -> dict[str, str]:
    if path is None:
        ref = importlib_resources.files("embed_exporter.resources") / "symbol_lexicon.tsv"
        text = ref.read_text(encoding="utf-8")
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    lexicon = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ExporterError(f"symbol lexicon line {lineno}: expected symbol<TAB>replacement")
        symbol, replacement = line.split("\t", 1)
        lexicon[symbol.strip().lower()] = replacement.strip()
    return lexicon


_LEXICON: dict[str, str] | None = None


def _lexicon() -> dict[str, str]:
    global _LEXICON
    if _LEXICON is None:
        _LEXICON = load_symbol_lexicon()
    return _LEXICON


def _strip_punctuation(token: str) -> str:
    out = []
    for i, ch in enumerate(token):
        if not unicodedata.category(ch).startswith("P"):
            out.append(ch)
            continue
        if ch in _APOSTROPHES and 0 < i < len(token) - 1:
            if token[i - 1].isalnum() and token[i + 1].isalnum():
                out.append(ch)
    return "".join(out)


def strip_punctuation_text(text: str) -> str:
    tokens = [_strip_punctuation(tok) for tok in text.split()]
    return " ".join(t for t in tokens if t)


def convert_symbols_text(text: str, lexicon: dict[str, str] | None = None) -> str:
    lexicon = lexicon if lexicon is not None else _lexicon()
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


def preprocess(conversation: Conversation, profile: str) -> Conversation:
    if profile not in PROFILES:
        raise ExporterError(f"unknown preprocessing profile {profile!r}")
    if profile == "none":
        return conversation
    if profile == "ap19":
        utts = [
            Utterance(u.speaker, strip_punctuation_text(u.text), u.label)
            for u in conversation.utterances
        ]
        return Conversation(conversation.id, conversation.rating, utts)
    utts = [
        Utterance(u.speaker, convert_symbols_text(u.text), u.label)
        for u in conversation.utterances
    ]
    return Conversation(conversation.id, conversation.rating, _merge_same_speaker(utts))
