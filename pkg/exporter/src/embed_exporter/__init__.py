"""embed_exporter: encode conversation utterances into UEB1 embedding files.

This bridge stands alone from the analysis toolkit and talks to it only
through shared file formats: conversations come in as JSON Lines, vectors
go out as UEB1 binaries with <conversation_id>:<index> utterance ids, and
the preprocessing here is kept byte-identical to the consumer's through a
shared golden-vector test suite.
"""

__version__ = "0.1.0"
