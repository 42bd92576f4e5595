"""Bag-of-words vectors, L1 scoring and an inverted-index keyframe database."""

from collections import Counter, defaultdict
from typing import Hashable, Iterable

BowVector = dict[int, float]


def bow_vector(words: Iterable[int]) -> BowVector:
    """Term-frequency vector normalized to unit L1 norm; empty input gives an empty vector."""
    counts = Counter(int(w) for w in words)
    total = sum(counts.values())
    if not total:
        return {}
    return {w: c / total for w, c in counts.items()}


def bow_similarity(a: BowVector, b: BowVector) -> float:
    """1 - 0.5 |a - b|_1 for L1-normalized vectors, i.e. the sum of per-word minima."""
    if len(a) > len(b):
        a, b = b, a
    score = 0.0
    for word, weight in a.items():
        other = b.get(word)
        if other is not None:
            score += min(weight, other)
    return min(max(score, 0.0), 1.0)


class BowDatabase:
    """Inverted index from word to the keyframes that contain it."""

    def __init__(self):
        self.vectors: dict[Hashable, BowVector] = {}
        self._index: dict[int, set[Hashable]] = defaultdict(set)

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, key: Hashable) -> bool:
        return key in self.vectors

    def add(self, key: Hashable, vector: BowVector) -> None:
        if key in self.vectors:
            self.remove(key)
        self.vectors[key] = vector
        for word in vector:
            self._index[word].add(key)

    def remove(self, key: Hashable) -> None:
        vector = self.vectors.pop(key, None)
        if vector is None:
            return
        for word in vector:
            bucket = self._index.get(word)
            if bucket is not None:
                bucket.discard(key)
                if not bucket:
                    del self._index[word]

    def query(
        self, vector: BowVector, exclude: set[Hashable] | None = None, limit: int | None = None
    ) -> list[tuple[float, Hashable]]:
        """(score, key) of keyframes sharing a word, best first; ties go to the lower key."""
        exclude = exclude or set()
        candidates: set[Hashable] = set()
        for word in vector:
            candidates |= self._index.get(word, set())
        scored = [(bow_similarity(vector, self.vectors[k]), k) for k in candidates - exclude]
        scored = [s for s in scored if s[0] > 0.0]
        scored.sort(key=lambda s: (-s[0], s[1]))
        return scored[:limit] if limit is not None else scored
