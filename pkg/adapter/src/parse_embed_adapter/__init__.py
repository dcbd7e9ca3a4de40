"""Data-preparation glue: stories in, CoNLL-U parses and sentence embeddings out."""

__version__ = "0.1.0"


class AdapterError(RuntimeError):
    pass
