"""Two-party closeness testers.

``ct2p_insecure`` runs the plaintext protocol over the metered channel: Bob
ships a split multiset, both parties recast their samples onto the enlarged
alphabet, they exchange collision-based norm estimates and a linear sketch,
and the squared distance estimate is compared against the threshold
``eps^2 t^2 / 2n + 2t``.

``ct2p_secure_reference`` evaluates the secure variant's reference function in
the clear through the trusted evaluator: the distance is assembled as an exact
split/cap adjustment (delta_1) plus a Bernoulli estimate of the capped
distance (delta_2) driven by a shared rounded rotation, with a majority vote
over sample sets.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .dist import (
    Distribution,
    IndexedSampleSet,
    Multiset,
    OccurrenceVector,
    SplitOccurrenceMatrix,
    cap,
    occurrence_vector,
    split_map,
    split_occurrence_matrix,
    split_samples,
)
from .harness import (
    CircuitSpec,
    ConfigError,
    Decision,
    Recv,
    Send,
    SharedRandomness,
    Transcript,
    Verdict,
    run_protocol,
    trusted_evaluate,
)
from .sketch import (
    RoundedRotation,
    collision_norm_estimate,
    estimate_distance_sq,
    l2_sketch,
)

ALPHA_MAX = 1.0 / 3.0  # larger relative error breaks the threshold gap


def threshold_tau(n: int, t: int, eps: float) -> float:
    """Decision threshold ``eps^2 t^2 / (2 n) + 2 t``."""
    if n < 1:
        raise ValueError("alphabet size must be positive")
    if t < 0:
        raise ValueError("sample count must be nonnegative")
    return eps * eps * t * t / (2.0 * n) + 2.0 * t


def distinguish(delta_est: float, tau: float) -> Decision:
    """SAME iff the distance estimate is at most the threshold."""
    if not (math.isfinite(delta_est) and math.isfinite(tau)):
        raise ValueError("estimate and threshold must be finite")
    return Decision.SAME if delta_est <= tau else Decision.FAR


@dataclass(frozen=True)
class CTParams:
    """Parameters of the insecure closeness tester.

    The hidden constants default to the committed calibration: ``c_alpha``
    trades sketch accuracy against communication (alpha is clamped to 1/3,
    above which the same/far ranges overlap), ``c_split`` scales the expected
    split multiset size, and ``big_c`` is the sample-count precondition
    multiplier.
    """

    n: int
    t: int
    eps: float
    c_split: float = 1.0
    c_alpha: float = 1.0 / 16.0
    big_c: float = 8.0
    sketch_delta: float = 0.05

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("alphabet size must be at least 2")
        if not 0 < self.eps <= 2:
            raise ConfigError("eps must be in (0, 2]")
        if self.t < self.min_samples():
            raise ConfigError(
                f"t={self.t} below precondition "
                f"t >= C*max(n^(2/3)*eps^(-4/3), sqrt(n)*eps^(-2)) = "
                f"{self.min_samples():.1f}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha out of range (0, 1)")

    def min_samples(self) -> float:
        return self.big_c * max(self.n ** (2 / 3) * self.eps ** (-4 / 3),
                                math.sqrt(self.n) * self.eps ** (-2))

    @property
    def alpha(self) -> float:
        return min(ALPHA_MAX, self.c_alpha * self.t * self.eps ** 2 / self.n)

    @property
    def split_rate(self) -> float:
        """Poisson rate for |S|: ``c_split * n^2 / (t^2 eps^4)``."""
        return self.c_split * self.n ** 2 / (self.t ** 2 * self.eps ** 4)

    @property
    def u_bound(self) -> float:
        """The ell_2 norm scale ``t eps^2 / n`` the split is meant to enforce."""
        return self.t * self.eps ** 2 / self.n


def far_instance(n: int, eps: float) -> Distribution:
    """A distribution at ell_1 distance >= eps from uniform (exactly eps when
    the paired construction applies: mass ``(1 +- eps)/n`` on letter pairs)."""
    if not 0 < eps <= 2:
        raise ValueError("eps must be in (0, 2]")
    if eps <= 1 and n % 2 == 0:
        probs = np.empty(n)
        probs[0::2] = (1.0 + eps) / n
        probs[1::2] = (1.0 - eps) / n
        return Distribution(probs)
    support = max(1, math.floor(n * (1 - eps / 2.0)))
    probs = np.zeros(n)
    probs[:support] = 1.0 / support
    return Distribution(probs)


def norm_estimates_agree(est_sq_a: float, est_sq_b: float, t: int,
                         factor: float = 4.0) -> bool:
    """Factor-``factor`` agreement of two norm estimates given as squares.

    Estimates are floored at the collision estimator's resolution 1/C(t,2)
    so that zero-collision runs compare as 'smallest representable' rather
    than zero.
    """
    floor = 1.0 / (t * (t - 1) / 2.0)
    a = max(est_sq_a, floor)
    b = max(est_sq_b, floor)
    return max(a, b) / min(a, b) <= factor * factor


def _encode_multiset(s: Multiset) -> bytes:
    items = s.sorted_items()
    out = [struct.pack("<I", len(items))]
    out += [struct.pack("<II", letter, mult) for letter, mult in items]
    return b"".join(out)


def _decode_multiset(payload: bytes, n: int) -> Multiset:
    (count,) = struct.unpack_from("<I", payload, 0)
    counts = np.zeros(n, dtype=np.int64)
    for idx in range(count):
        letter, mult = struct.unpack_from("<II", payload, 4 + 8 * idx)
        counts[letter] = mult
    return Multiset(counts)


def ct2p_insecure(alice_samples: IndexedSampleSet, bob_samples: IndexedSampleSet,
                  params: CTParams, seed: int) -> Verdict:
    """Run the plaintext closeness protocol; returns the verdict + transcript."""
    if alice_samples.t != params.t or bob_samples.t != params.t:
        raise ConfigError("both parties need exactly t samples")
    if alice_samples.n != params.n or bob_samples.n != params.n:
        raise ConfigError("sample alphabet does not match params")

    shared = SharedRandomness(seed)
    sketch_seed = shared.derive_seed("ct2p-sketch")

    def alice_program():
        payload = yield Recv()
        s = _decode_multiset(payload, params.n)
        sm = split_map(s, params.n)
        split = split_samples(alice_samples, sm, shared.stream("alice-split"))
        a_s = occurrence_vector(split, sm.total_letters)
        norm_sq = collision_norm_estimate(split)
        yield Send(struct.pack("<d", norm_sq))
        sk = l2_sketch(a_s, params.alpha, params.sketch_delta, sketch_seed)
        yield Send(sk.to_bytes())
        verdict_byte = yield Recv()
        return Decision.FAR if verdict_byte == b"\x01" else Decision.SAME

    def bob_program():
        rng = shared.stream("bob-splitset")
        size = int(rng.poisson(params.split_rate))
        # Bootstrap the multiset from Bob's own sample pool; at valid
        # parameters the rate is far below t so the reuse is negligible.
        if size > 0:
            picks = rng.integers(0, bob_samples.t, size=size)
            s = Multiset.from_letters(bob_samples.letters[picks], params.n)
        else:
            s = Multiset(np.zeros(params.n, dtype=np.int64))
        yield Send(_encode_multiset(s))
        sm = split_map(s, params.n)
        split = split_samples(bob_samples, sm, shared.stream("bob-split"))
        b_s = occurrence_vector(split, sm.total_letters)
        bob_norm_sq = collision_norm_estimate(split)
        alice_norm_payload = yield Recv()
        (alice_norm_sq,) = struct.unpack("<d", alice_norm_payload)
        sketch_payload = yield Recv()
        if not norm_estimates_agree(alice_norm_sq, bob_norm_sq, params.t):
            verdict = Decision.FAR
        else:
            bob_sk = l2_sketch(b_s, params.alpha, params.sketch_delta, sketch_seed)
            alice_sk = _sketch_from_bytes(sketch_payload, bob_sk)
            delta = estimate_distance_sq(alice_sk, bob_sk)
            tau = threshold_tau(sm.total_letters, params.t, params.eps)
            verdict = distinguish(delta, tau)
        yield Send(b"\x01" if verdict is Decision.FAR else b"\x00")
        return verdict

    alice_out, bob_out, transcript = run_protocol(alice_program(), bob_program())
    assert alice_out == bob_out
    return Verdict(bob_out, transcript)


def _sketch_from_bytes(payload: bytes, template):
    (count,) = struct.unpack_from("<I", payload, 0)
    counters = np.frombuffer(payload, dtype="<f8", offset=4, count=count)
    return type(template)(counters, template.seed, template.alpha,
                          template.delta, template.groups, template.group_size)


# ---------------------------------------------------------------------------
# Secure-variant reference computation


def split_occurrences_from_matrix(matrix: SplitOccurrenceMatrix,
                                  bucket_counts: np.ndarray) -> np.ndarray:
    """Assemble the full split occurrence vector from matrix rows.

    ``bucket_counts[i]`` is the number of buckets letter ``i`` splits into;
    the result is the concatenation of rows ``(i, bucket_counts[i])`` in
    letter order, i.e. the occurrence vector over the split alphabet realized
    by this matrix's random recasts.
    """
    return np.concatenate([matrix.row(i, int(bucket_counts[i]))
                           for i in range(len(bucket_counts))])


def capped_split_adjustment(a: OccurrenceVector, b: OccurrenceVector,
                            s_a: Multiset, s_b: Multiset, level: int,
                            rng: np.random.Generator | None = None,
                            a_matrix: SplitOccurrenceMatrix | None = None,
                            b_matrix: SplitOccurrenceMatrix | None = None) -> float:
    """Exact ``||A_S - B_S||^2 - ||A' - B'||^2`` via split-matrix lookups.

    Only letters in ``M = {i : i in S or A_i > L or B_i > L}`` can contribute;
    everywhere else the capped difference equals the unsplit one.  Split
    matrices may be passed in (so a caller can reuse the same recast to verify
    the identity); otherwise they are drawn from ``rng``.
    """
    if level < 1:
        raise ValueError("cap threshold must be at least 1")
    s = s_a.union(s_b)
    buckets = 1 + s.counts
    members = (s.counts > 0) | (a.counts > level) | (b.counts > level)
    if a_matrix is None or b_matrix is None:
        if rng is None:
            raise ValueError("need an rng when split matrices are not supplied")
        max_buckets = int(buckets.max())
        if a_matrix is None:
            a_matrix = split_occurrence_matrix(a, max_buckets, rng)
        if b_matrix is None:
            b_matrix = split_occurrence_matrix(b, max_buckets, rng)
    a_capped = cap(a, level).counts
    b_capped = cap(b, level).counts
    total = 0.0
    for i in np.nonzero(members)[0]:
        m_i = int(buckets[i])
        row_a = a_matrix.row(int(i), m_i)
        row_b = b_matrix.row(int(i), m_i)
        split_sq = float(((row_a - row_b) ** 2).sum())
        capped_sq = float((a_capped[i] - b_capped[i]) ** 2)
        total += split_sq - capped_sq
    return total


@dataclass(frozen=True)
class SecureCTParams:
    """Parameters of the secure-variant reference computation."""

    n: int
    t: int
    eps: float
    k: int
    big_c: float = 8.0
    c: float = 64.0
    c_a: float = 0.25
    c_l: float = 2.0
    rotation_flatness: int = 40
    votes: int = 0  # 0 means "derive from k" (k rounded up to odd)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("security parameter must be at least 1")
        if not 0 < self.eps <= 2:
            raise ConfigError("eps must be in (0, 2]")
        if self.votes == 0:
            object.__setattr__(self, "votes",
                               self.k if self.k % 2 == 1 else self.k + 1)
        minimum = self.big_c * self.k * max(
            self.n ** (2 / 3) * self.eps ** (-4 / 3),
            math.sqrt(self.n) * self.eps ** (-2))
        if self.t < minimum:
            raise ConfigError(
                f"t={self.t} below precondition C*k*max(...) = {minimum:.1f}")
        if self.t_prime < 4:
            raise ConfigError("too few samples per sample set")

    @property
    def t_prime(self) -> int:
        return self.t // self.votes

    @property
    def cap_level(self) -> int:
        return max(1, math.ceil(self.t_prime ** 3 * self.eps ** 4 /
                                (self.c * self.n ** 2)))

    @property
    def alpha(self) -> float:
        return self.c_a * math.sqrt(self.cap_level / self.t_prime)

    @property
    def bernoulli_trials(self) -> int:
        return max(1, math.ceil(self.c_l * self.k ** 2 *
                                math.log(self.n) ** 2 / self.alpha ** 2))

    @property
    def splitset_size(self) -> int:
        return max(1, math.ceil(self.t_prime / (2 * self.cap_level)))


@dataclass(frozen=True)
class SetVote:
    delta1: float
    delta2: float
    tau: float
    headroom: float  # T = 2 (tau - delta1)
    clamped: bool
    vote: Decision


def secure_reference_votes(alice_letters: np.ndarray, bob_letters: np.ndarray,
                           params: SecureCTParams, shared: SharedRandomness,
                           shared_split_randomness: bool = False) -> list[SetVote]:
    """Per-sample-set votes of the reference function f."""
    n, tp, level = params.n, params.t_prime, params.cap_level
    half = tp // 2
    votes = []
    for j in range(params.votes):
        block_a = alice_letters[j * tp:(j + 1) * tp]
        block_b = bob_letters[j * tp:(j + 1) * tp]
        s_a = Multiset.from_letters(block_a[:params.splitset_size], n)
        s_b = Multiset.from_letters(block_b[:params.splitset_size], n)
        a = OccurrenceVector(np.bincount(block_a[tp - half:], minlength=n))
        b = OccurrenceVector(np.bincount(block_b[tp - half:], minlength=n))
        a_capped = cap(a, level)
        b_capped = cap(b, level)

        max_buckets = int((1 + s_a.counts + s_b.counts).max())
        a_label = "split" if shared_split_randomness else "alice-split"
        b_label = "split" if shared_split_randomness else "bob-split"
        a_matrix = split_occurrence_matrix(a, max_buckets, shared.stream(a_label, j))
        b_matrix = split_occurrence_matrix(b, max_buckets, shared.stream(b_label, j))
        delta1 = capped_split_adjustment(a, b, s_a, s_b, level,
                                         a_matrix=a_matrix, b_matrix=b_matrix)

        tau = threshold_tau(n + s_a.size + s_b.size, half, params.eps)
        headroom = 2.0 * (tau - delta1)
        if headroom <= 0:
            votes.append(SetVote(delta1, 0.0, tau, headroom, False, Decision.FAR))
            continue

        rot = RoundedRotation(n, shared.derive_seed("rotation", j),
                              flatness_k=params.rotation_flatness)
        rotated = rot.apply(a_capped.counts - b_capped.counts)
        idx = shared.stream("bern-idx", j).integers(0, n, params.bernoulli_trials)
        biases = n * rotated[idx] ** 2 / (headroom * params.votes)
        if bool((biases > 1.0).any()):
            votes.append(SetVote(delta1, 0.0, tau, headroom, True, Decision.FAR))
            continue
        z = shared.stream("bern-z", j).random(params.bernoulli_trials) < biases
        delta2 = headroom * params.votes / params.bernoulli_trials * float(z.sum())
        vote = Decision.FAR if delta1 + delta2 > tau else Decision.SAME
        votes.append(SetVote(delta1, delta2, tau, headroom, False, vote))
    return votes


def secure_reference_f(alice_letters, bob_letters, params: SecureCTParams,
                       seed: int, shared_split_randomness: bool = False) -> Decision:
    """The reference function f evaluated directly (no evaluator)."""
    shared = SharedRandomness(seed)
    votes = secure_reference_votes(np.asarray(alice_letters, dtype=np.int64),
                                   np.asarray(bob_letters, dtype=np.int64),
                                   params, shared, shared_split_randomness)
    far = sum(1 for v in votes if v.vote is Decision.FAR)
    return Decision.FAR if far > len(votes) // 2 else Decision.SAME


def ct2p_secure_reference(alice_samples: IndexedSampleSet,
                          bob_samples: IndexedSampleSet,
                          params: SecureCTParams, seed: int,
                          shared_split_randomness: bool = False) -> Verdict:
    """Evaluate f through the trusted evaluator and meter its modeled cost."""
    if alice_samples.t < params.votes * params.t_prime or \
            bob_samples.t < params.votes * params.t_prime:
        raise ConfigError("not enough samples for the configured sample sets")
    if alice_samples.n != params.n or bob_samples.n != params.n:
        raise ConfigError("sample alphabet does not match params")

    def joint(rom_a, rom_b):
        return secure_reference_f(rom_a[0], rom_b[0], params, seed,
                                  shared_split_randomness)

    spec = CircuitSpec(
        gate_count=params.votes * (math.ceil(params.t_prime / params.cap_level)
                                   + params.bernoulli_trials),
        rom_word_bits=64,
        rom_entries=2 * params.votes * params.n * params.t_prime ** 2,
        output_bits=1,
    )
    decision, evaluation = trusted_evaluate(
        joint, [alice_samples.letters], [bob_samples.letters], spec)
    transcript = Transcript()
    transcript.record("alice", 16)  # shared-randomness seed exchange
    transcript.record_secure(evaluation.modeled_bits)
    return Verdict(decision, transcript)
