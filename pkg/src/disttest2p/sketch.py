"""L2 machinery: linear sketches, collision norm estimates, rounded rotations.

The sketch is the classic sign-projection estimator: counters are inner
products of the input vector with seeded rows of +-1 signs, and the squared
norm is recovered as a median of group means of squared counters.  Sketches
built from the same seed are linear in their input, which is what lets two
parties estimate ``||X - Y||^2`` from the difference of their counter
vectors.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=4)
def _sign_matrix(seed: int, rows: int, n: int) -> np.ndarray:
    """Seeded +-1 sign rows, identical for every holder of the seed.

    Signs are drawn i.i.d. from the seeded generator, i.e. the projection
    family is fully independent (in particular 4-wise independent, which is
    all the variance analysis needs).  float32 is exact here: counters are
    signed sums of counts, integers well below 2**24.
    """
    bits = np.random.default_rng(seed).integers(0, 2, size=(rows, n),
                                                dtype=np.int8)
    signs = (2 * bits - 1).astype(np.float32)
    signs.flags.writeable = False
    return signs


@dataclass(frozen=True)
class L2Sketch:
    """Linear sketch of an integer vector.

    ``counters`` has ``groups * group_size`` entries; estimation takes the
    mean of squares inside each group and the median across groups.
    """

    counters: np.ndarray
    seed: int
    alpha: float
    delta: float
    groups: int
    group_size: int

    def to_bytes(self) -> bytes:
        """Length-prefixed float64 counter vector (one 64-bit word each)."""
        return struct.pack("<I", self.counters.size) + \
            self.counters.astype("<f8").tobytes()


def sketch_width(alpha: float, delta: float) -> tuple[int, int]:
    """(groups, group_size) for a (1 +- alpha) estimate failing w.p. <= delta."""
    groups = max(1, math.ceil(9.0 * math.log(1.0 / delta)))
    group_size = max(1, math.ceil(6.0 / alpha ** 2))
    return groups, group_size


def l2_sketch(vector, alpha: float, delta: float, seed: int) -> L2Sketch:
    """Sketch a count vector (or anything array-like) at relative error alpha."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    v = np.asarray(getattr(vector, "counts", vector), dtype=np.float32)
    groups, group_size = sketch_width(alpha, delta)
    signs = _sign_matrix(seed, groups * group_size, v.size)
    counters = (signs @ v).astype(np.float64)
    return L2Sketch(counters, seed, alpha, delta, groups, group_size)


def _estimate_from_counters(counters: np.ndarray, groups: int,
                            group_size: int) -> float:
    sq = counters.astype(np.float64) ** 2
    means = sq.reshape(groups, group_size).mean(axis=1)
    return float(np.median(means))


def estimate_norm_sq(s: L2Sketch) -> float:
    return _estimate_from_counters(s.counters, s.groups, s.group_size)


def estimate_distance_sq(sa: L2Sketch, sb: L2Sketch) -> float:
    """Estimate ``||X - Y||^2`` from two same-seed sketches."""
    if (sa.seed, sa.alpha, sa.delta) != (sb.seed, sb.alpha, sb.delta):
        raise ValueError("sketches built with different seed or accuracy")
    if sa.counters.size != sb.counters.size:
        raise ValueError("sketch widths differ")
    return _estimate_from_counters(sa.counters - sb.counters,
                                   sa.groups, sa.group_size)


def collision_norm_estimate(samples) -> float:
    """Unbiased collision estimate of ``||p||_2^2`` from a sample set.

    Returns ``sum_i C(X_i, 2) / C(t, 2)``; needs at least two samples.
    """
    letters = np.asarray(getattr(samples, "letters", samples), dtype=np.int64)
    t = letters.size
    if t < 2:
        raise ValueError("need at least two samples to count collisions")
    counts = np.bincount(letters)
    collisions = float((counts * (counts - 1) // 2).sum())
    return collisions / (t * (t - 1) / 2.0)


class RoundedRotation:
    """Seeded near-orthonormal rotation with entries rounded to a fixed grid.

    The matrix is the Q factor of a seeded Gaussian matrix (sign-corrected so
    it is Haar-distributed), with every entry rounded to the nearest multiple
    of ``2**-granularity``.  It is a pure function of ``(n, seed)``: the same
    inputs give a bit-identical matrix, which is how two parties share it by
    exchanging only the seed.  ``flatness_k`` is the bound checked by the
    invariant suite: ``max_i (Rv)_i^2 <= (||v||^2 / n) * flatness_k``.
    """

    def __init__(self, n: int, seed: int, flatness_k: int = 40,
                 granularity: int = 20):
        if n < 1:
            raise ValueError("dimension must be positive")
        self.n = n
        self.seed = seed
        self.flatness_k = flatness_k
        self.granularity = granularity
        self._matrix = None

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            rng = np.random.default_rng(self.seed)
            g = rng.standard_normal((self.n, self.n))
            q, r = np.linalg.qr(g)
            q = q * np.sign(np.diag(r))
            scale = float(1 << self.granularity)
            self._matrix = np.round(q * scale) / scale
        return self._matrix

    def row(self, i: int) -> np.ndarray:
        return self.matrix()[i]

    def apply(self, v) -> np.ndarray:
        v = np.asarray(getattr(v, "counts", v), dtype=np.float64)
        return self.matrix() @ v


def apply_rotation_coord(rot: RoundedRotation, v, i: int) -> float:
    """Coordinate ``(Rv)_i`` of the rotated vector."""
    if not 0 <= i < rot.n:
        raise ValueError("coordinate out of range")
    v = np.asarray(getattr(v, "counts", v), dtype=np.float64)
    return float(rot.row(i) @ v)
