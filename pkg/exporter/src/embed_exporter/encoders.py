"""Sentence encoders behind one batch interface.

The default path loads a pretrained sentence-transformers model (the
bi-encoder family the analysis toolkit's embeddings come from). The
"hash:<dim>" encoder is a deterministic offline fallback: a feature-hash
bag of tokens. It carries no semantics but exercises every byte of the
export pipeline without model downloads.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .preprocess import ExporterError

DEFAULT_MODEL = "distilbert-base-nli-stsb-mean-tokens"


class HashingEncoder:
    """Deterministic text -> R^dim via signed token hashing."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ExporterError("hash encoder dim must be positive")
        self.dim = dim

    def encode(self, texts: list[str], batch_size: int = 64) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            for token in text.lower().split():
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                index = int.from_bytes(digest[:8], "little") % self.dim
                sign = 1.0 if digest[8] % 2 == 0 else -1.0
                out[i, index] += sign
        return out


class SbertEncoder:
    """Pretrained sentence-transformers model; deterministic at inference."""

    def __init__(self, model_name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as e:
            raise ExporterError(
                "sentence-transformers is not installed; install the 'sbert' "
                "extra or use a hash:<dim> encoder"
            ) from e
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as e:  # model resolution touches network/cache
            raise ExporterError(
                f"could not load encoder {model_name!r}: {e}. The model must "
                "be available in the local cache or downloadable."
            ) from e
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str], batch_size: int = 64) -> np.ndarray:
        vectors = self._model.encode(
            texts,
            batch_size=batch_size,
            convert_to_numpy=True,
            normalize_embeddings=False,
            show_progress_bar=False,
        )
        return np.asarray(vectors, dtype=np.float32)


def resolve_encoder(name: str):
    """hash:<dim> builds the offline encoder; anything else is a model name."""
    if name.startswith("hash:"):
        try:
            dim = int(name.split(":", 1)[1])
        except ValueError:
            raise ExporterError(f"bad hash encoder spec {name!r}, want hash:<dim>") from None
        return HashingEncoder(dim)
    return SbertEncoder(name)
