"""Goal-similarity retrieval of reference episodes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .episode import Dataset, Episode
from .parsing import describe_action
from .prompts import ReferenceBlock, ReferenceEntry


@dataclass(frozen=True, eq=False)
class GoalVector:
    dims: np.ndarray
    norm: float

    @classmethod
    def of(cls, v: np.ndarray) -> "GoalVector":
        v = np.asarray(v, dtype=float)
        return cls(v, float(np.linalg.norm(v)))


def _bucket(gram: str, dims: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dims


def trigrams(text: str) -> list[str]:
    t = text.lower()
    if len(t) < 3:
        return [t] if t else []
    return [t[i:i + 3] for i in range(len(t) - 2)]


class TrigramEmbedder:
    """Hashed character-trigram counts, L2-normalized."""

    def __init__(self, dims: int = 512):
        self.dims = dims
        self.identity = f"trigram-{dims}"

    def __call__(self, text: str) -> np.ndarray:
        v = np.zeros(self.dims)
        for g in trigrams(text):
            v[_bucket(g, self.dims)] += 1.0
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


Embedder = Callable[[str], np.ndarray]

DEFAULT_EMBEDDER = TrigramEmbedder()


def embed_goal(text: str, embedder: Embedder = DEFAULT_EMBEDDER) -> GoalVector:
    return GoalVector.of(embedder(text))


def cosine(a: GoalVector, b: GoalVector) -> float:
    if a.norm == 0 or b.norm == 0:
        return 0.0
    return float(np.dot(a.dims, b.dims) / (a.norm * b.norm))


class EmbeddingCache:
    """Goal vectors keyed by ``(embedder identity, sha256(goal))``, JSON on disk."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._store: dict[str, list[float]] = {}
        if self.path and self.path.exists():
            self._store = json.loads(self.path.read_text(encoding="utf-8"))

    @staticmethod
    def key(identity: str, goal: str) -> str:
        return f"{identity}:{hashlib.sha256(goal.encode('utf-8')).hexdigest()}"

    def get(self, embedder: Embedder, goal: str) -> GoalVector:
        k = self.key(getattr(embedder, "identity", repr(embedder)), goal)
        if k not in self._store:
            self._store[k] = [float(x) for x in embedder(goal)]
        return GoalVector.of(np.array(self._store[k]))

    def save(self) -> None:
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self._store, sort_keys=True), encoding="utf-8")


class CorpusTooSmallError(ValueError):
    pass


class MissingTraceError(KeyError):
    pass


class Retriever:
    """Precomputes corpus goal vectors once; read-only afterwards."""

    def __init__(
        self,
        corpus: Dataset | Sequence[Episode],
        embedder: Embedder = DEFAULT_EMBEDDER,
        *,
        k: int = 2,
        same_subset: bool = True,
        cache: EmbeddingCache | None = None,
        predicted: Mapping[str, Sequence[str]] | None = None,
    ):
        self.episodes = tuple(corpus)
        self.embedder = embedder
        self.k = k
        self.same_subset = same_subset
        self.predicted = predicted
        cache = cache or EmbeddingCache()
        self._vectors = {e.id: cache.get(embedder, e.goal) for e in self.episodes}
        self._cache = cache

    def vector(self, e: Episode) -> GoalVector:
        v = self._vectors.get(e.id)
        return v if v is not None else self._cache.get(self.embedder, e.goal)

    def top_k(self, query: Episode, k: int | None = None) -> list[Episode]:
        k = self.k if k is None else k
        if k < 1:
            raise ValueError("k must be positive")
        pool = [
            e for e in self.episodes
            if e.id != query.id and (not self.same_subset or e.subset == query.subset)
        ]
        if len(pool) < k:
            raise CorpusTooSmallError(f"need {k} reference episodes, pool has {len(pool)}")
        q = self.vector(query)
        scored = sorted(pool, key=lambda e: (-cosine(q, self.vector(e)), e.id))
        return scored[:k]

    def reference_block(self, query: Episode) -> ReferenceBlock:
        return build_reference_block(self.top_k(query), self.predicted)


def top_k_similar(
    query: Episode,
    corpus: Dataset | Sequence[Episode],
    k: int = 2,
    embedder: Embedder = DEFAULT_EMBEDDER,
    *,
    same_subset: bool = True,
) -> list[Episode]:
    """Most similar episodes by goal cosine; ties broken by episode id."""
    return Retriever(corpus, embedder, k=k, same_subset=same_subset).top_k(query)


def gold_descriptions(e: Episode) -> list[str]:
    return [describe_action(st.action, st.screen) for st in e.steps]


def build_reference_block(
    refs: Sequence[Episode], traces: Mapping[str, Sequence[str]] | None = None
) -> ReferenceBlock:
    """Reference entries in the given order.

    With ``traces`` (episode id -> predicted action descriptions) every
    reference must have one; otherwise gold actions are described.
    """
    entries = []
    for e in refs:
        if traces is not None:
            if e.id not in traces:
                raise MissingTraceError(f"no predicted actions for reference {e.id!r}")
            descs = list(traces[e.id])
        else:
            descs = gold_descriptions(e)
        caption = (e.steps[0].screen.caption or "") if e.steps else ""
        entries.append(ReferenceEntry(e.goal, caption, tuple(descs)))
    return ReferenceBlock(tuple(entries))
