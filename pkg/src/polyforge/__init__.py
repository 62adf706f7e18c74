"""polyforge: multilingual corpus engineering toolkit.

Library + CLI covering the data side of multilingual LLM training:
corpus cleaning and filtering, MinHash-LSH deduplication, BPE tokenizer
training, curriculum data mixing, self-instruct dataset construction,
and a multilingual evaluation harness.
"""

__version__ = "0.1.0"

from .corpus import Document, DatasetManifest, read_documents, write_documents, corpus_stats

__all__ = [
    "Document",
    "DatasetManifest",
    "read_documents",
    "write_documents",
    "corpus_stats",
    "__version__",
]
