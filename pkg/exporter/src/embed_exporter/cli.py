"""Export command: conversations JSONL in, UEB1 embedding file out.

    embed-export --data conversations.jsonl --profile ap19 \
        --model distilbert-base-nli-stsb-mean-tokens --out emb.ueb --batch 64

Utterance ids follow <conversation_id>:<index> with indices taken after
preprocessing, so they line up exactly with what the analysis toolkit
computes for the same profile.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .encoders import DEFAULT_MODEL, resolve_encoder
from .preprocess import PROFILES, ExporterError, load_conversations, preprocess
from .ueb import write_embeddings


def export(data_path, profile: str, model: str, out_path, batch: int) -> tuple[int, int]:
    """Encode every preprocessed utterance; returns (dim, count)."""
    conversations = [preprocess(c, profile) for c in load_conversations(data_path)]
    ids: list[str] = []
    texts: list[str] = []
    for conv in conversations:
        for i, utt in enumerate(conv.utterances):
            ids.append(conv.utterance_id(i))
            texts.append(utt.text)

    encoder = resolve_encoder(model)
    if texts:
        vectors = encoder.encode(texts, batch_size=batch)
    else:
        import numpy as np

        vectors = np.zeros((0, encoder.dim), dtype=np.float32)
    write_embeddings(out_path, encoder.dim, zip(ids, vectors))
    return encoder.dim, len(ids)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Encode conversation utterances into a UEB1 embedding file.",
    )
    parser.add_argument("--version", action="version", version=f"embed-export {__version__}")
    parser.add_argument("--data", required=True, help="conversations JSONL file")
    parser.add_argument("--profile", choices=PROFILES, default="none")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="sentence encoder name, or hash:<dim> for the offline fallback")
    parser.add_argument("--out", required=True, help="output UEB1 path")
    parser.add_argument("--batch", type=int, default=64)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        dim, count = export(args.data, args.profile, args.model, args.out, args.batch)
    except (ExporterError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"wrote {count} embeddings (dim {dim}) -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
