"""MinHash-LSH fuzzy deduplication: shingling, signatures, banded candidate
generation, and cluster-based removal."""

from __future__ import annotations

import hashlib
import multiprocessing
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .corpus import Document

# Scripts deduplicated with character shingles (no whitespace word boundaries).
CHAR_SHINGLE_LANGS = frozenset(["zh", "ja", "th", "ko"])

_U64 = np.uint64
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_GOLDEN = _U64(0x9E3779B97F4A7C15)


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays (wrapping)."""
    x = (x ^ (x >> _U64(30))) * _MIX1
    x = (x ^ (x >> _U64(27))) * _MIX2
    return x ^ (x >> _U64(31))


def _perm_keys(num_perm: int, seed: int) -> np.ndarray:
    idx = np.arange(1, num_perm + 1, dtype=np.uint64)
    return _mix64(idx * _GOLDEN + _U64(seed & 0xFFFFFFFFFFFFFFFF))


def _hash_shingle(unit: str) -> int:
    digest = hashlib.blake2b(unit.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class ShingleSet:
    """Unique 64-bit hashes of a document's width-k shingles."""

    hashes: np.ndarray  # sorted unique uint64
    k: int
    mode: str

    def __len__(self) -> int:
        return len(self.hashes)


def shingle(text: str, k: int, mode: str = "token") -> ShingleSet:
    """Hash all contiguous width-k character or token windows of `text`.

    Texts shorter than k units produce an empty set.
    """
    if k < 1:
        raise ValueError("shingle width k must be >= 1")
    if mode == "char":
        units = [text[i:i + k] for i in range(len(text) - k + 1)]
    elif mode == "token":
        tokens = text.split()
        units = [" ".join(tokens[i:i + k]) for i in range(len(tokens) - k + 1)]
    else:
        raise ValueError(f"unknown shingle mode {mode!r}")
    if not units:
        return ShingleSet(hashes=np.empty(0, dtype=np.uint64), k=k, mode=mode)
    values = np.fromiter((_hash_shingle(u) for u in units), dtype=np.uint64, count=len(units))
    return ShingleSet(hashes=np.unique(values), k=k, mode=mode)


@dataclass
class MinHashSignature:
    values: np.ndarray  # (num_perm,) uint64
    num_perm: int
    seed: int


def signature(shingles: ShingleSet, num_perm: int = 128, seed: int = 42) -> MinHashSignature:
    """Per-permutation minima over the shingle hashes, using a seeded
    splitmix64 hash family in place of true permutations."""
    if len(shingles) == 0:
        raise ValueError("cannot sign an empty shingle set")
    values = _signature_values(shingles.hashes, num_perm, seed)
    return MinHashSignature(values=values, num_perm=num_perm, seed=seed)


def _signature_values(hashes: np.ndarray, num_perm: int, seed: int) -> np.ndarray:
    keys = _perm_keys(num_perm, seed)
    out = np.full(num_perm, np.iinfo(np.uint64).max, dtype=np.uint64)
    # chunk to bound the (num_perm x n) intermediate
    step = 1 << 15
    for lo in range(0, len(hashes), step):
        block = hashes[lo:lo + step]
        h = _mix64(block[None, :] ^ keys[:, None])
        np.minimum(out, h.min(axis=1), out=out)
    return out


def estimate_jaccard(sig_a: MinHashSignature, sig_b: MinHashSignature) -> float:
    """Fraction of matching signature positions."""
    if sig_a.num_perm != sig_b.num_perm or sig_a.seed != sig_b.seed:
        raise ValueError("signatures have mismatched num_perm or seed")
    return float(np.mean(sig_a.values == sig_b.values))


@dataclass
class LshConfig:
    bands: int = 16
    rows: int = 8
    seed: int = 42

    def validate(self, num_perm: int) -> None:
        if self.bands * self.rows != num_perm:
            raise ValueError(
                f"bands*rows = {self.bands * self.rows} does not equal num_perm = {num_perm}"
            )


def lsh_candidates(
    signatures: Dict[str, MinHashSignature],
    cfg: LshConfig,
) -> Set[Tuple[str, str]]:
    """Unordered id pairs whose signatures agree on at least one full band."""
    if not signatures:
        return set()
    seeds = {s.seed for s in signatures.values()}
    perms = {s.num_perm for s in signatures.values()}
    if len(seeds) > 1 or len(perms) > 1:
        raise ValueError("signatures have mismatched num_perm or seed")
    num_perm = perms.pop()
    cfg.validate(num_perm)

    pairs: Set[Tuple[str, str]] = set()
    for band in range(cfg.bands):
        lo, hi = band * cfg.rows, (band + 1) * cfg.rows
        buckets: Dict[bytes, List[str]] = {}
        for doc_id, sig in signatures.items():
            buckets.setdefault(sig.values[lo:hi].tobytes(), []).append(doc_id)
        for members in buckets.values():
            if len(members) < 2:
                continue
            members = sorted(members)
            for i in range(len(members)):
                for j in range(i + 1, len(members)):
                    pairs.add((members[i], members[j]))
    return pairs


@dataclass
class ShingleConfig:
    """Shingling defaults: character 5-shingles for scripts without word
    boundaries, whitespace-token 3-shingles elsewhere."""

    mode: str = "auto"  # auto | char | token
    k_token: int = 3
    k_char: int = 5

    def for_lang(self, lang: Optional[str]) -> Tuple[str, int]:
        if self.mode == "char":
            return "char", self.k_char
        if self.mode == "token":
            return "token", self.k_token
        if lang in CHAR_SHINGLE_LANGS:
            return "char", self.k_char
        return "token", self.k_token


@dataclass
class MinHashConfig:
    num_perm: int = 128
    seed: int = 42


# Parallel signature computation: items are shared with forked workers through
# this module-level slot (copy-on-write), avoiding per-worker pickling.
_FORK_SHARED = None


def _sig_for_item(item, shingle_cfg: ShingleConfig, minhash_cfg: MinHashConfig):
    doc_id, text, lang = item
    mode, k = shingle_cfg.for_lang(lang)
    sh = shingle(text, k, mode)
    if len(sh) == 0:
        return None
    return _signature_values(sh.hashes, minhash_cfg.num_perm, minhash_cfg.seed)


def _sig_span(span: Tuple[int, int]):
    items, shingle_cfg, minhash_cfg = _FORK_SHARED
    lo, hi = span
    return [_sig_for_item(items[i], shingle_cfg, minhash_cfg) for i in range(lo, hi)]


def compute_signatures(
    items: Sequence[Tuple[str, str, Optional[str]]],
    shingle_cfg: Optional[ShingleConfig] = None,
    minhash_cfg: Optional[MinHashConfig] = None,
    workers: int = 1,
) -> List[Optional[np.ndarray]]:
    """Signature values for (id, text, lang) items, in input order.

    Items too short to shingle yield None. Results are identical for any
    worker count; workers > 1 uses forked processes.
    """
    shingle_cfg = shingle_cfg or ShingleConfig()
    minhash_cfg = minhash_cfg or MinHashConfig()
    if workers <= 1 or len(items) < 2 or "fork" not in multiprocessing.get_all_start_methods():
        return [_sig_for_item(it, shingle_cfg, minhash_cfg) for it in items]

    global _FORK_SHARED
    _FORK_SHARED = (items, shingle_cfg, minhash_cfg)
    try:
        n = len(items)
        n_chunks = min(workers * 4, n)
        bounds = np.linspace(0, n, n_chunks + 1, dtype=int)
        spans = [(int(bounds[i]), int(bounds[i + 1])) for i in range(n_chunks)]
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers) as pool:
            parts = pool.map(_sig_span, spans)
    finally:
        _FORK_SHARED = None
    return [sig for part in parts for sig in part]


class _UnionFind:
    def __init__(self):
        self.parent: Dict[str, str] = {}

    def find(self, x: str) -> str:
        root = x
        while self.parent.get(root, root) != root:
            root = self.parent[root]
        while self.parent.get(x, x) != x:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


@dataclass
class DedupResult:
    kept: List[Document]
    removed: List[Document]
    candidate_pairs: int = 0
    verified_pairs: int = 0


def deduplicate(
    docs: Sequence[Document],
    shingle_cfg: Optional[ShingleConfig] = None,
    minhash_cfg: Optional[MinHashConfig] = None,
    lsh_cfg: Optional[LshConfig] = None,
    jaccard_threshold: float = 0.8,
    keep_policy: str = "min_id",
    workers: int = 1,
) -> DedupResult:
    """Remove near-duplicate documents.

    LSH candidates are verified with the MinHash Jaccard estimate, clustered
    with union-find, and each cluster keeps one representative chosen by
    `keep_policy` ("min_id": lexicographically smallest id, "first_seen":
    earliest input position). Removed docs record their representative in
    meta.duplicate_of. Documents too short to shingle are always kept.
    """
    if not 0.0 < jaccard_threshold <= 1.0:
        raise ValueError("jaccard_threshold must be in (0, 1]")
    if keep_policy not in ("min_id", "first_seen"):
        raise ValueError(f"unknown keep_policy {keep_policy!r}")
    shingle_cfg = shingle_cfg or ShingleConfig()
    minhash_cfg = minhash_cfg or MinHashConfig()
    lsh_cfg = lsh_cfg or LshConfig()

    items = [(d.id, d.text, d.lang) for d in docs]
    values = compute_signatures(items, shingle_cfg, minhash_cfg, workers=workers)
    sigs = {
        doc.id: MinHashSignature(values=v, num_perm=minhash_cfg.num_perm, seed=minhash_cfg.seed)
        for doc, v in zip(docs, values)
        if v is not None
    }

    candidates = lsh_candidates(sigs, lsh_cfg)
    uf = _UnionFind()
    verified = 0
    for a, b in candidates:
        if estimate_jaccard(sigs[a], sigs[b]) >= jaccard_threshold:
            uf.union(a, b)
            verified += 1

    clusters: Dict[str, List[str]] = {}
    for doc_id in sigs:
        clusters.setdefault(uf.find(doc_id), []).append(doc_id)

    position = {doc.id: i for i, doc in enumerate(docs)}
    representative: Dict[str, str] = {}
    for members in clusters.values():
        if keep_policy == "min_id":
            rep = min(members)
        else:
            rep = min(members, key=lambda m: position[m])
        for m in members:
            representative[m] = rep

    kept: List[Document] = []
    removed: List[Document] = []
    for doc in docs:
        rep = representative.get(doc.id, doc.id)
        if rep == doc.id:
            kept.append(doc)
        else:
            removed.append(doc.with_meta(duplicate_of=rep))
    return DedupResult(
        kept=kept,
        removed=removed,
        candidate_pairs=len(candidates),
        verified_pairs=verified,
    )


# ---------------------------------------------------------------------------
# Signature cache file ("PFMH1")
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"PFMH1\n"


def write_signature_cache(
    path,
    ids: Sequence[str],
    values: Sequence[Optional[np.ndarray]],
    num_perm: int,
    seed: int,
) -> None:
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<IQQ", num_perm, seed & 0xFFFFFFFFFFFFFFFF, len(ids)))
        for doc_id, vals in zip(ids, values):
            raw_id = doc_id.encode("utf-8")
            fh.write(struct.pack("<HB", len(raw_id), 1 if vals is not None else 0))
            fh.write(raw_id)
            if vals is not None:
                fh.write(vals.astype("<u8").tobytes())


def read_signature_cache(path) -> Tuple[List[str], List[Optional[np.ndarray]], int, int]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise ValueError(f"{path}: not a signature cache (bad magic)")
        num_perm, seed, count = struct.unpack("<IQQ", fh.read(20))
        ids: List[str] = []
        values: List[Optional[np.ndarray]] = []
        for _ in range(count):
            id_len, has_sig = struct.unpack("<HB", fh.read(3))
            ids.append(fh.read(id_len).decode("utf-8"))
            if has_sig:
                values.append(np.frombuffer(fh.read(num_perm * 8), dtype="<u8").astype(np.uint64))
            else:
                values.append(None)
    return ids, values, num_perm, seed
