import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polyforge.corpus import Document, write_documents


@pytest.fixture
def make_doc():
    def factory(i, text, source="web", lang=None, **meta):
        return Document(id=f"d{i:05d}", text=text, source=source, lang=lang,
                        meta={k: str(v) for k, v in meta.items()})
    return factory


@pytest.fixture
def write_jsonl(tmp_path):
    def writer(docs, name="docs.jsonl"):
        path = tmp_path / name
        write_documents(docs, path)
        return path
    return writer
