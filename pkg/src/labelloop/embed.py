"""Embeddings, exact cosine kNN, and similarity-based prompt retrieval.

Search is exact (pools stay in the low thousands); ranking ties break by
ascending id so every ordering here is total and reproducible.
"""

from __future__ import annotations

import hashlib
import json
import re
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .core import AnnotatedSet, DataPool, LoopError, Sample


class EmbeddingError(LoopError):
    pass


class NoContextError(LoopError):
    """No human-annotated examples exist yet; callers fall back to zero-shot."""


class Encoder(Protocol):
    name: str
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


_TOKEN_RE = re.compile(r"[\w']+")


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


class HashingEncoder:
    """Feature-hashing bag of tokens: counts over `dim` buckets, L2-normalized.

    Deterministic and dependency-free; stands in for a sentence encoder so
    the whole loop runs at desk scale. Texts with no tokens map to the zero
    vector, which downstream similarity code rejects explicitly.
    """

    def __init__(self, dim: int = 64) -> None:
        self.dim = dim
        self.name = f"hashing-bow-{dim}"
        self._memo: dict[str, int] = {}

    def encode(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            b = self._memo.get(token)
            if b is None:
                b = self._memo[token] = _bucket(token, self.dim)
            vec[b] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec


class ProcessEncoder:
    """External encoder over a line protocol: one {"id","text"} request per
    line on stdin, one {"id","vector":[...]} response per line on stdout."""

    def __init__(self, name: str, dim: int, command: Sequence[str]) -> None:
        self.name = name
        self.dim = dim
        self.command = list(command)

    def encode(self, text: str) -> np.ndarray:
        return self.encode_batch([("q", text)])["q"]

    def encode_batch(self, items: Sequence[tuple[str, str]]) -> dict[str, np.ndarray]:
        payload = "".join(json.dumps({"id": i, "text": t}) + "\n" for i, t in items)
        proc = subprocess.run(
            self.command, input=payload, capture_output=True, text=True, check=False
        )
        if proc.returncode != 0:
            raise EmbeddingError(f"encoder process failed (rc={proc.returncode}): {proc.stderr.strip()}")
        out: dict[str, np.ndarray] = {}
        for line in proc.stdout.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            vec = np.asarray(rec["vector"], dtype=np.float64)
            if vec.shape != (self.dim,):
                raise EmbeddingError(f"encoder returned dim {vec.shape} for id {rec['id']!r}, expected ({self.dim},)")
            out[rec["id"]] = vec
        missing = [i for i, _ in items if i not in out]
        if missing:
            raise EmbeddingError(f"encoder returned no vector for ids {missing}")
        return out


class HttpEncoder:
    """Same line protocol as ProcessEncoder, POSTed to an HTTP endpoint."""

    def __init__(self, name: str, dim: int, url: str, timeout: float = 30.0) -> None:
        import httpx

        self.name = name
        self.dim = dim
        self.url = url
        self._client = httpx.Client(timeout=timeout)

    def encode(self, text: str) -> np.ndarray:
        payload = json.dumps({"id": "q", "text": text}) + "\n"
        resp = self._client.post(self.url, content=payload)
        resp.raise_for_status()
        rec = json.loads(resp.text.splitlines()[0])
        vec = np.asarray(rec["vector"], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise EmbeddingError(f"encoder returned dim {vec.shape}, expected ({self.dim},)")
        return vec


class EmbeddingStore:
    """id -> vector map for one encoder, with an optional jsonl sidecar cache
    keyed by (encoder name, sample id)."""

    def __init__(self, encoder: Encoder, cache_path: str | Path | None = None) -> None:
        self.encoder = encoder
        self.vectors: dict[str, np.ndarray] = {}
        self.cache_path = Path(cache_path) if cache_path else None
        if self.cache_path and self.cache_path.exists():
            self._load_cache()

    def _load_cache(self) -> None:
        assert self.cache_path is not None
        with self.cache_path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("encoder") != self.encoder.name:
                    continue
                self.vectors[rec["id"]] = np.asarray(rec["vector"], dtype=np.float64)

    def _append_cache(self, sample_id: str, vec: np.ndarray) -> None:
        if self.cache_path is None:
            return
        with self.cache_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"encoder": self.encoder.name, "id": sample_id, "vector": vec.tolist()}) + "\n")

    def put(self, sample_id: str, vec: np.ndarray) -> None:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.encoder.dim:
            raise EmbeddingError(f"vector for {sample_id!r} has shape {arr.shape}, expected ({self.encoder.dim},)")
        if not np.all(np.isfinite(arr)):
            raise EmbeddingError(f"vector for {sample_id!r} has non-finite entries")
        self.vectors[sample_id] = arr

    def ensure(self, samples: Iterable[Sample]) -> None:
        for s in samples:
            if s.id not in self.vectors:
                vec = self.encoder.encode(s.text)
                self.put(s.id, vec)
                self._append_cache(s.id, vec)

    def get(self, sample_id: str) -> np.ndarray:
        try:
            return self.vectors[sample_id]
        except KeyError:
            raise EmbeddingError(f"no embedding stored for sample {sample_id!r}") from None

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        return np.stack([self.get(i) for i in ids])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


def knn(
    store: EmbeddingStore, query: np.ndarray, candidates: Iterable[str], k: int
) -> list[tuple[str, float]]:
    """Exact top-k by cosine similarity, descending; ties by ascending id."""
    ids = sorted(candidates)
    if not ids:
        raise EmbeddingError("knn needs a non-empty candidate set")
    if k < 1:
        raise EmbeddingError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64)
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise EmbeddingError("cosine similarity undefined for zero vectors")
    mat = store.matrix(ids)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        zero = ids[int(np.argmax(norms == 0.0))]
        raise EmbeddingError(f"cosine similarity undefined for zero vector (sample {zero!r})")
    sims = (mat @ q) / (norms * qn)
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [(ids[i], float(sims[i])) for i in order[: min(k, len(ids))]]


@dataclass(frozen=True, slots=True)
class RetrievedExample:
    sample: Sample
    label: str
    similarity: float


def retrieve_prompt_examples(
    store: EmbeddingStore,
    pool: DataPool,
    query_id: str,
    human_set: AnnotatedSet,
    neighbors: int = 50,
    shots: int = 5,
) -> list[RetrievedExample]:
    """In-context examples for one query: nearest `neighbors` human-annotated
    samples, narrowed to the top `shots`, most similar first.

    The two-stage narrowing is exact here (identical to a single top-`shots`
    cut); it matters only if an approximate first stage is ever swapped in.
    """
    if not human_set.human_ids:
        raise NoContextError("no human-annotated examples available for retrieval")
    query_vec = store.get(query_id)
    stage1 = knn(store, query_vec, human_set.human_ids, k=neighbors)
    top = stage1[: min(shots, len(stage1))]
    return [
        RetrievedExample(
            sample=pool.sample(sid),
            label=human_set.annotations[sid].label,
            similarity=sim,
        )
        for sid, sim in top
    ]
