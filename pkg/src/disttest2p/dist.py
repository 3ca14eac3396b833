"""Discrete distributions, sample sets, occurrence vectors and split machinery.

Everything here works over a finite alphabet whose letters are the integers
``0 .. n-1``.  Probabilities are float64, counts are int64.  All container
types are immutable after construction (arrays are marked read-only), so they
can be shared freely between concurrent trials; random generators are never
stored inside them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_SUM_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Distribution:
    """Explicit probability vector over the alphabet ``0 .. n-1``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probability vector must be 1-D and non-empty")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(p.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", _readonly(p))

    @property
    def n(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class Multiset:
    """Multiset of letters from ``0 .. n-1``, stored as a dense count vector."""

    counts: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("count vector must be 1-D and non-empty")
        if np.any(c < 0):
            raise ValueError("multiplicities must be nonnegative")
        object.__setattr__(self, "counts", _readonly(c))
        object.__setattr__(self, "n", c.size)

    @classmethod
    def from_letters(cls, letters, n: int) -> "Multiset":
        letters = np.asarray(letters, dtype=np.int64)
        if letters.size and (letters.min() < 0 or letters.max() >= n):
            raise ValueError("letter out of range")
        return cls(np.bincount(letters, minlength=n))

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    def multiplicity(self, letter: int) -> int:
        return int(self.counts[letter])

    def sorted_items(self) -> list[tuple[int, int]]:
        """Deterministic ``(letter, multiplicity)`` pairs, ascending letters."""
        nz = np.nonzero(self.counts)[0]
        return [(int(i), int(self.counts[i])) for i in nz]

    def union(self, other: "Multiset") -> "Multiset":
        """Multiset sum (multiplicities add)."""
        if self.n != other.n:
            raise ValueError("mismatched alphabets")
        return Multiset(self.counts + other.counts)


@dataclass(frozen=True)
class OccurrenceVector:
    """Per-letter counts of a sample set; ``t`` is the total sample count."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("count vector must be 1-D and non-empty")
        if np.any(c < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", _readonly(c))

    @property
    def n(self) -> int:
        return self.counts.size

    @property
    def t(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class SplitMap:
    """Bucket counts ``a_i >= 1`` of a split alphabet.

    Letter ``i`` of the ground alphabet maps to ``a_i`` buckets; buckets are
    ordered lexicographically by ``(letter, bucket index)`` so both parties
    agree on the enlarged alphabet without extra communication.
    """

    bucket_counts: np.ndarray
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.bucket_counts, dtype=np.int64)
        if a.ndim != 1 or a.size < 1:
            raise ValueError("bucket counts must be 1-D and non-empty")
        if np.any(a < 1):
            raise ValueError("every letter needs at least one bucket")
        off = np.concatenate(([0], np.cumsum(a)))
        object.__setattr__(self, "bucket_counts", _readonly(a))
        object.__setattr__(self, "offsets", _readonly(off))

    @property
    def n(self) -> int:
        return self.bucket_counts.size

    @property
    def total_letters(self) -> int:
        """Size of the split alphabet, ``n + |S|``."""
        return int(self.offsets[-1])


@dataclass(frozen=True)
class IndexedSampleSet:
    """Ordered draws; index ``i`` in ``0 .. t-1`` is the sample's identity."""

    letters: np.ndarray
    n: int

    def __post_init__(self):
        a = np.asarray(self.letters, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("sample letters must be 1-D")
        if a.size and (a.min() < 0 or a.max() >= self.n):
            raise ValueError("letter out of range")
        object.__setattr__(self, "letters", _readonly(a))

    @property
    def t(self) -> int:
        return self.letters.size


def uniform_distribution(n: int) -> Distribution:
    return Distribution(np.full(n, 1.0 / n))


def point_mass(n: int, letter: int) -> Distribution:
    p = np.zeros(n)
    p[letter] = 1.0
    return Distribution(p)


def sample(dist: Distribution, t: int, rng: np.random.Generator) -> IndexedSampleSet:
    """Draw ``t`` i.i.d. samples from ``dist``; deterministic given rng state."""
    if t < 0:
        raise ValueError("sample count must be nonnegative")
    if t == 0:
        return IndexedSampleSet(np.empty(0, dtype=np.int64), dist.n)
    letters = rng.choice(dist.n, size=t, p=dist.probs)
    return IndexedSampleSet(letters.astype(np.int64), dist.n)


def poisson_sample(lam: float, rng: np.random.Generator) -> int:
    """One draw from Poisson(lam).

    Backed by the generator's exact sampler (inversion for small rates, a
    transformed-rejection method above), valid for rates up to 1e9.
    """
    if lam < 0:
        raise ValueError("rate must be nonnegative")
    return int(rng.poisson(lam))


def occurrence_vector(samples: IndexedSampleSet, n: int) -> OccurrenceVector:
    """Count occurrences of each letter ``0 .. n-1`` in the sample set."""
    if samples.t and samples.letters.max() >= n:
        raise ValueError("sample letter out of range for requested alphabet")
    return OccurrenceVector(np.bincount(samples.letters, minlength=n))


def split_map(s: Multiset, n: int) -> SplitMap:
    """Bucket counts ``a_i = 1 + multiplicity of i in S``."""
    if s.n != n:
        raise ValueError("multiset alphabet does not match")
    return SplitMap(1 + s.counts)


def split_distribution(p: Distribution, sm: SplitMap) -> Distribution:
    """Distribution over the split alphabet: bucket ``(i, j)`` gets ``p_i / a_i``."""
    if p.n != sm.n:
        raise ValueError("mismatched alphabets")
    per_bucket = p.probs / sm.bucket_counts
    return Distribution(np.repeat(per_bucket, sm.bucket_counts))


def split_sample(letter: int, sm: SplitMap, rng: np.random.Generator) -> int:
    """Recast one ground-alphabet draw as a draw from the split distribution."""
    if not 0 <= letter < sm.n:
        raise ValueError("letter out of range")
    a = int(sm.bucket_counts[letter])
    j = int(rng.integers(a)) if a > 1 else 0
    return int(sm.offsets[letter]) + j


def split_samples(samples: IndexedSampleSet, sm: SplitMap,
                  rng: np.random.Generator) -> IndexedSampleSet:
    """Vectorised :func:`split_sample` over a whole sample set."""
    if samples.n != sm.n:
        raise ValueError("mismatched alphabets")
    a = sm.bucket_counts[samples.letters]
    j = np.floor(rng.random(samples.t) * a).astype(np.int64)
    # floating-point corner: rng.random() < 1 so j < a, but clip to be safe
    np.clip(j, 0, a - 1, out=j)
    return IndexedSampleSet(sm.offsets[samples.letters] + j, sm.total_letters)


def cap(x: OccurrenceVector, level: int) -> OccurrenceVector:
    """Clip every count at ``level``."""
    if level < 0:
        raise ValueError("cap level must be nonnegative")
    return OccurrenceVector(np.minimum(x.counts, level))


@dataclass(frozen=True)
class SplitOccurrenceMatrix:
    """Random splits of each letter's count into every bucket count up to a cap.

    ``row(i, j)`` is a fixed random split of ``X_i`` into ``j`` buckets (the
    buckets sum to ``X_i``); rows are drawn independently across ``(i, j)`` at
    construction time, which is what lets a later lookup stand in for
    recasting the underlying samples one by one.
    """

    rows: tuple  # rows[i][j-1] is an int64 array of length j
    source_counts: np.ndarray
    max_buckets: int

    def row(self, letter: int, buckets: int) -> np.ndarray:
        if not 1 <= buckets <= self.max_buckets:
            raise ValueError("bucket count out of range")
        return self.rows[letter][buckets - 1]


def split_occurrence_matrix(x: OccurrenceVector, max_buckets: int,
                            rng: np.random.Generator) -> SplitOccurrenceMatrix:
    if max_buckets < 1:
        raise ValueError("need at least one bucket")
    per_j = []
    for j in range(1, max_buckets + 1):
        if j == 1:
            per_j.append(x.counts.reshape(-1, 1))
        else:
            per_j.append(rng.multinomial(x.counts, np.full(j, 1.0 / j)))
    rows = tuple(
        tuple(_readonly(per_j[j][i]) for j in range(max_buckets))
        for i in range(x.n)
    )
    return SplitOccurrenceMatrix(rows, x.counts, max_buckets)


def l1_distance(p: Distribution, q: Distribution) -> float:
    if p.n != q.n:
        raise ValueError("mismatched alphabets")
    return float(np.abs(p.probs - q.probs).sum())


def l2_norm_sq(p: Distribution) -> float:
    return float(np.dot(p.probs, p.probs))


# ---------------------------------------------------------------------------
# Canonical text serialization: newline-delimited "index value" pairs.

def distribution_to_text(p: Distribution) -> str:
    return "".join(f"{i} {float(p.probs[i])!r}\n" for i in range(p.n))


def distribution_from_text(text: str) -> Distribution:
    pairs = _parse_pairs(text, float)
    probs = np.zeros(len(pairs))
    for i, v in pairs:
        probs[i] = v
    return Distribution(probs)


def occurrence_to_text(x: OccurrenceVector) -> str:
    return "".join(f"{i} {int(x.counts[i])}\n" for i in range(x.n))


def occurrence_from_text(text: str) -> OccurrenceVector:
    pairs = _parse_pairs(text, int)
    counts = np.zeros(len(pairs), dtype=np.int64)
    for i, v in pairs:
        counts[i] = v
    return OccurrenceVector(counts)


def _parse_pairs(text: str, parse):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'index value'")
        pairs.append((int(parts[0]), parse(parts[1])))
    if not pairs:
        raise ValueError("empty serialization")
    indices = sorted(i for i, _ in pairs)
    if indices != list(range(len(pairs))):
        raise ValueError("indices must be exactly 0..n-1")
    return pairs
