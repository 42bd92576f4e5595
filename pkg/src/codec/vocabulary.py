"""Binary visual vocabulary: training, nearest-word lookup and the EVOC file format."""

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from codec.errors import InsufficientDataError, VocabularyFormatError

logger = logging.getLogger(__name__)

MAGIC = b"EVOC"
VERSION = 1
_HEADER = struct.Struct("<4sBIH")
FLAT_LIMIT = 4096
FANOUT = 16
_LOOKUP_BYTES = 1 << 23


def _hamming_to_words(descs: np.ndarray, words: np.ndarray) -> np.ndarray:
    """(N, S) distances, computed in chunks to bound memory."""
    out = np.empty((len(descs), len(words)), dtype=np.int32)
    chunk = max(1, _LOOKUP_BYTES // max(words.size, 1))
    for start in range(0, len(descs), chunk):
        block = descs[start : start + chunk]
        xor = np.bitwise_xor(block[:, None, :], words[None, :, :])
        out[start : start + len(block)] = np.bitwise_count(xor).sum(axis=2, dtype=np.int32)
    return out


def _nearest(descs: np.ndarray, words: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest word per descriptor (lowest index on ties) and its distance."""
    dist = _hamming_to_words(descs, words)
    idx = np.argmin(dist, axis=1)
    return idx, dist[np.arange(len(descs)), idx]


@dataclass(frozen=True, eq=False)
class Vocabulary:
    words: np.ndarray  # (S, D/8) uint8

    def __post_init__(self):
        w = np.ascontiguousarray(self.words, dtype=np.uint8)
        if w.ndim != 2 or len(w) == 0:
            raise VocabularyFormatError("A vocabulary needs at least one word")
        w.flags.writeable = False
        object.__setattr__(self, "words", w)

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def descriptor_bits(self) -> int:
        return self.words.shape[1] * 8

    @property
    def fingerprint(self) -> int:
        return zlib.crc32(self.words.tobytes()) & 0xFFFFFFFF

    def lookup(self, desc: np.ndarray) -> tuple[int, np.ndarray, int]:
        idx, res, h = self.lookup_many(np.asarray(desc, dtype=np.uint8).reshape(1, -1))
        return int(idx[0]), res[0], int(h[0])

    def lookup_many(self, descs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(word indices, XOR residuals, residual popcounts) for (N, D/8) descriptors."""
        descs = np.atleast_2d(np.asarray(descs, dtype=np.uint8))
        if len(descs) == 0:
            return np.zeros(0, dtype=int), descs.copy(), np.zeros(0, dtype=int)
        idx, h = _nearest(descs, self.words)
        residuals = np.bitwise_xor(descs, self.words[idx])
        return idx.astype(int), residuals, h.astype(int)

    def save(self, path: str | Path) -> None:
        body = _HEADER.pack(MAGIC, VERSION, self.size, self.descriptor_bits) + self.words.tobytes()
        with open(path, "wb") as f:
            f.write(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
        logger.info(f"[Codec] Saved vocabulary of {self.size} words to {path}")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, "rb") as f:
            data = f.read()
        return cls.from_bytes(data)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Vocabulary":
        if len(data) < _HEADER.size + 4:
            raise VocabularyFormatError("Vocabulary file is truncated")
        magic, version, size, bits = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise VocabularyFormatError(f"Bad vocabulary magic {magic!r}")
        if version != VERSION:
            raise VocabularyFormatError(f"Unsupported vocabulary version {version}")
        if bits % 8:
            raise VocabularyFormatError(f"Descriptor length {bits} is not byte aligned")
        expected = _HEADER.size + size * bits // 8 + 4
        if len(data) != expected:
            raise VocabularyFormatError(f"Vocabulary file has {len(data)} bytes, expected {expected}")
        (crc,) = struct.unpack_from("<I", data, expected - 4)
        if crc != zlib.crc32(data[: expected - 4]) & 0xFFFFFFFF:
            raise VocabularyFormatError("Vocabulary checksum mismatch")
        words = np.frombuffer(data, dtype=np.uint8, count=size * bits // 8, offset=_HEADER.size)
        return cls(words.reshape(size, bits // 8).copy())


def bow_lookup(desc: np.ndarray, vocab: Vocabulary) -> tuple[int, np.ndarray, int]:
    """(nearest word index, desc XOR word, popcount of the residual)."""
    return vocab.lookup(desc)


def bitwise_majority(descs: np.ndarray) -> np.ndarray:
    """Per-bit majority; a tie resolves to 0."""
    bits = np.unpackbits(np.atleast_2d(descs), axis=1, bitorder="little")
    ones = bits.sum(axis=0, dtype=np.int64)
    return np.packbits((2 * ones > len(bits)).astype(np.uint8), bitorder="little")


def _kmedians(descs: np.ndarray, k: int, rng: np.random.Generator, max_iters: int) -> np.ndarray:
    k = min(k, len(descs))
    centers = descs[np.sort(rng.choice(len(descs), size=k, replace=False))].copy()
    assign = None
    for _ in range(max_iters):
        new_assign, _ = _nearest(descs, centers)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = descs[assign == c]
            if len(members):
                centers[c] = bitwise_majority(members)
    return centers


def _split_budget(budget: int, sizes: np.ndarray) -> list[int]:
    """Largest-remainder split with at least one word per non-empty child."""
    n = len(sizes)
    shares = np.ones(n, dtype=int)
    spare = budget - n
    if spare > 0:
        exact = spare * sizes / sizes.sum()
        extra = np.floor(exact).astype(int)
        left = spare - int(extra.sum())
        for i in np.argsort(-(exact - extra), kind="stable")[:left]:
            extra[i] += 1
        shares += extra
    return shares.tolist()


def _hierarchical(descs, budget, rng, max_iters) -> list[np.ndarray]:
    if budget <= 1:
        return [bitwise_majority(descs)]
    if len(descs) <= budget:
        return list(descs)
    if budget <= FANOUT:
        return list(_kmedians(descs, budget, rng, max_iters))
    centers = _kmedians(descs, FANOUT, rng, max_iters)
    assign, _ = _nearest(descs, centers)
    children = [descs[assign == c] for c in range(len(centers))]
    children = [c for c in children if len(c)]
    if len(children) == 1:
        return list(_kmedians(descs, budget, rng, max_iters))
    shares = _split_budget(budget, np.array([len(c) for c in children], dtype=float))
    words = []
    for child, share in zip(children, shares):
        words.extend(_hierarchical(child, share, rng, max_iters))
    return words


def train_vocabulary(
    descriptors: np.ndarray, S: int, seed: int = 0, max_iters: int = 10
) -> Vocabulary:
    """k-medians over Hamming distance with bitwise-majority centroids.

    Flat for S <= 4096, otherwise a fan-out-16 hierarchy whose leaves form
    the word list. Duplicate words are replaced by unused training
    descriptors so that all S words are distinct. Deterministic given seed.

    Raises:
        InsufficientDataError: fewer than S descriptors (or distinct descriptors).
    """
    descs = np.ascontiguousarray(np.atleast_2d(descriptors), dtype=np.uint8)
    if S < 1:
        raise ValueError("S must be >= 1")
    if len(descs) < S:
        raise InsufficientDataError(len(descs), S)

    rng = np.random.default_rng(seed)
    if S == 1:
        words = [bitwise_majority(descs)]
    elif S <= FLAT_LIMIT:
        words = list(_kmedians(descs, S, rng, max_iters))
    else:
        words = _hierarchical(descs, S, rng, max_iters)

    unique: dict[bytes, np.ndarray] = {}
    for w in words:
        unique.setdefault(w.tobytes(), w)
    if len(unique) < S:
        for i in rng.permutation(len(descs)):
            if len(unique) >= S:
                break
            unique.setdefault(descs[i].tobytes(), descs[i])
    if len(unique) < S:
        raise InsufficientDataError(len(unique), S)

    vocab = Vocabulary(np.vstack(list(unique.values())[:S]))
    logger.info(f"[Codec] Trained vocabulary: {vocab.size} words from {len(descs)} descriptors")
    return vocab
