"""Two-party independence tester and its alphabet-reduction machinery.

The tester never estimates the distance to the product distribution on the
full ``[n] x [m]`` alphabet.  Instead each repetition splits both marginals,
samples a small letter set on Alice's side, and pairs her restricted samples
once with Bob's index-aligned samples (simulating the joint law) and once with
an independent block (simulating the product of marginals).  The two paired
sample sets are then closeness-tested with the exact squared distance of their
occurrence vectors, gated by a factor-4 collision-norm agreement check.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .closeness import norm_estimates_agree, threshold_tau
from .dist import (
    Distribution,
    IndexedSampleSet,
    Multiset,
    SplitMap,
    split_map,
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
from .sketch import collision_norm_estimate


def conditioned(p: Distribution, letters) -> Distribution:
    """``p`` restricted to the letter set and renormalized.

    The output alphabet is the given letters in ascending order.
    """
    letters = np.unique(np.asarray(letters, dtype=np.int64))
    if letters.size == 0:
        raise ValueError("conditioning set is empty")
    if letters.min() < 0 or letters.max() >= p.n:
        raise ValueError("letter out of range")
    mass = float(p.probs[letters].sum())
    if mass <= 0:
        raise ValueError("conditioning set has zero mass")
    return Distribution(p.probs[letters] / mass)


def usi_sample(n: int, alpha: int, beta: int, rng: np.random.Generator) -> int:
    """Draw ``|S1 ∩ S2|`` for a fixed alpha-subset and uniform beta-subset of [n]."""
    if alpha > n or beta > n:
        raise ValueError("subset sizes cannot exceed the ground set")
    if alpha == 0 or beta == 0:
        return 0
    return int(rng.hypergeometric(ngood=alpha, nbad=n - alpha, nsample=beta))


@dataclass(frozen=True)
class IndicesSetVector:
    """Per-letter sets of sample indices; the inverse of an indexed sample set."""

    sets: tuple
    n: int
    total: int

    def __getitem__(self, letter: int) -> np.ndarray:
        return self.sets[letter]

    def nonempty_letters(self) -> np.ndarray:
        return np.array([j for j in range(self.n) if self.sets[j].size > 0],
                        dtype=np.int64)


def indices_set_vector(samples: IndexedSampleSet, n: int) -> IndicesSetVector:
    if samples.t and samples.letters.max() >= n:
        raise ValueError("sample letter out of range")
    order = np.argsort(samples.letters, kind="stable")
    sorted_letters = samples.letters[order]
    boundaries = np.searchsorted(sorted_letters, np.arange(n + 1))
    sets = tuple(order[boundaries[j]:boundaries[j + 1]] for j in range(n))
    return IndicesSetVector(sets, n, samples.t)


@dataclass(frozen=True)
class JointDistribution:
    """Explicit joint probability matrix over ``[n] x [m]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise ValueError("joint probabilities must be a non-empty matrix")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        p = np.ascontiguousarray(p)
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def m(self) -> int:
        return self.probs.shape[1]

    def marginal_rows(self) -> Distribution:
        return Distribution(self.probs.sum(axis=1))

    def marginal_cols(self) -> Distribution:
        return Distribution(self.probs.sum(axis=0))

    def l1_to_product(self) -> float:
        outer = np.outer(self.marginal_rows().probs, self.marginal_cols().probs)
        return float(np.abs(self.probs - outer).sum())

    def sample_joint(self, t: int, rng: np.random.Generator
                     ) -> tuple[IndexedSampleSet, IndexedSampleSet]:
        """t index-aligned draws; sample i is one joint draw shared by Alice/Bob."""
        flat = rng.choice(self.n * self.m, size=t, p=self.probs.ravel())
        return (IndexedSampleSet(flat // self.m, self.n),
                IndexedSampleSet(flat % self.m, self.m))


def product_joint(p1: Distribution, p2: Distribution) -> JointDistribution:
    return JointDistribution(np.outer(p1.probs, p2.probs))


def diagonal_joint(n: int, m: int) -> JointDistribution:
    """Mass 1/n on cells ``(i, i mod m)``: uniform marginals, far from product."""
    probs = np.zeros((n, m))
    probs[np.arange(n), np.arange(n) % m] = 1.0 / n
    return JointDistribution(probs)


def split_joint(joint: JointDistribution, sm_rows: SplitMap,
                sm_cols: SplitMap) -> JointDistribution:
    """Joint law after splitting rows by ``sm_rows`` and columns by ``sm_cols``."""
    per_bucket = joint.probs / np.outer(sm_rows.bucket_counts,
                                        sm_cols.bucket_counts)
    expanded = np.repeat(np.repeat(per_bucket, sm_rows.bucket_counts, axis=0),
                         sm_cols.bucket_counts, axis=1)
    return JointDistribution(expanded)


def conditioned_rows(joint: JointDistribution, letters) -> JointDistribution:
    """Joint conditioned on the row letter landing in the given set."""
    letters = np.unique(np.asarray(letters, dtype=np.int64))
    mass = float(joint.probs[letters].sum())
    if mass <= 0:
        raise ValueError("conditioning set has zero mass")
    return JointDistribution(joint.probs[letters] / mass)


@dataclass(frozen=True)
class ITParams:
    """Parameters of the independence tester.

    Constants default to the committed calibration (the asymptotic statement
    leaves them free): ``big_c`` scales the sample-count precondition, ``c1``
    caps the per-repetition sample budget, ``c2`` sizes the sampled letter
    set, ``c3`` the paired subsets, and ``c_eps`` the threshold's effective
    distance after alphabet reduction.
    """

    n: int
    m: int
    t: int
    eps: float
    k: int
    big_c: float = 100.0
    c1: float = 16.0
    c2: float = 24.0
    c3: float = 2.0
    c_eps: float = 1.35
    votes: int = 0  # 0 means "derive from k" (k rounded up to odd)

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ConfigError("need n >= m >= 1")
        if not 0 < self.eps <= 2:
            raise ConfigError("eps must be in (0, 2]")
        if self.k < 1:
            raise ConfigError("security parameter must be at least 1")
        if self.votes == 0:
            object.__setattr__(self, "votes",
                               self.k if self.k % 2 == 1 else self.k + 1)
        if self.t < self.min_samples():
            raise ConfigError(
                f"t={self.t} below precondition C*k*(n^(2/3) m^(1/3) eps^(-4/3)"
                f" + sqrt(nm)/eps^2) = {self.min_samples():.1f}")
        if self.t_prime < 4:
            raise ConfigError("too few samples per sample set")

    def min_samples(self) -> float:
        return self.big_c * self.k * (
            self.n ** (2 / 3) * self.m ** (1 / 3) * self.eps ** (-4 / 3)
            + math.sqrt(self.n * self.m) / self.eps ** 2)

    @property
    def t_prime(self) -> int:
        cap = math.floor(self.c1 * self.n * math.sqrt(self.m) / self.eps)
        return min(self.t // (3 * self.votes), cap)

    @property
    def ell_target(self) -> int:
        """Requested size of the sampled letter set (capped per repetition at
        the split alphabet size)."""
        tp = self.t_prime
        need = max(self.n ** 3 * self.m / (tp ** 3 * self.eps ** 4),
                   self.n ** 2 * self.m / (tp ** 2 * self.eps ** 4),
                   1.0 / self.eps ** 2)
        return max(1, math.ceil(self.c2 * need))

    @property
    def subset_budget(self) -> int:
        return max(1, math.ceil(self.c3 * self.t_prime * self.ell_target / self.n))

    @property
    def eps_reduced(self) -> float:
        return self.c_eps * self.eps


def _pair_codes(a_letters: np.ndarray, b_letters: np.ndarray, m_split: int
                ) -> np.ndarray:
    return a_letters * m_split + b_letters


def _exact_distance_sq(x_codes: np.ndarray, y_codes: np.ndarray) -> float:
    both = np.concatenate([x_codes, y_codes])
    _, inverse = np.unique(both, return_inverse=True)
    cx = np.bincount(inverse[:x_codes.size])
    cy = np.bincount(inverse[x_codes.size:], minlength=cx.size)
    if cy.size > cx.size:
        cx = np.pad(cx, (0, cy.size - cx.size))
    return float(((cx - cy) ** 2).sum())


@dataclass(frozen=True)
class Repetition:
    """Everything one repetition computed; kept for the invariant suite."""

    sm_a: SplitMap
    sm_b: SplitMap
    a_letters: np.ndarray
    bp_letters: np.ndarray
    bq_letters: np.ndarray
    gamma: np.ndarray
    lam: int
    chosen: np.ndarray
    pool: np.ndarray
    subsets: tuple
    subset_size: int
    chi: bool
    delta: float
    tau: float
    abstained: bool
    vote: Decision


def _blocks(letters: np.ndarray, t_prime: int, count: int) -> list[np.ndarray]:
    return [letters[i * t_prime:(i + 1) * t_prime] for i in range(count)]


def run_repetition(rep: int, a_split_block, a_block, b_split_block, bp_block,
                   bq_block, params: ITParams, shared: SharedRandomness
                   ) -> Repetition:
    n, m, tp = params.n, params.m, params.t_prime
    s_a = Multiset.from_letters(a_split_block[:min(tp, n)], n)
    s_b = Multiset.from_letters(b_split_block[:m], m)
    sm_a = split_map(s_a, n)
    sm_b = split_map(s_b, m)
    n_a = sm_a.total_letters
    m_b = sm_b.total_letters

    a = split_samples(IndexedSampleSet(a_block, n), sm_a,
                      shared.stream("alice-recast", rep))
    b_p = split_samples(IndexedSampleSet(bp_block, m), sm_b,
                        shared.stream("bob-recast-p", rep))
    b_q = split_samples(IndexedSampleSet(bq_block, m), sm_b,
                        shared.stream("bob-recast-q", rep))

    isv = indices_set_vector(a, n_a)
    gamma = isv.nonempty_letters()
    ell = min(params.ell_target, n_a)
    rng = shared.stream("reduction", rep)
    lam = min(usi_sample(n_a, gamma.size, ell, rng),
              math.ceil(100.0 * tp * ell / n))

    abstain = Repetition(sm_a, sm_b, a.letters, b_p.letters, b_q.letters,
                         gamma, lam, np.empty(0, np.int64),
                         np.empty(0, np.int64), (), 0, True, 0.0, 0.0,
                         True, Decision.SAME)
    if lam == 0:
        return abstain
    chosen = np.sort(rng.choice(gamma, size=lam, replace=False))
    pool = np.concatenate([isv[j] for j in chosen]) if lam else np.empty(0, np.int64)
    if pool.size < 4:
        return abstain

    size = min(params.subset_budget, pool.size // 4)
    perm = rng.permutation(pool)
    subsets = tuple(perm[q * size:(q + 1) * size] for q in range(4))
    i_p, i_q, j_p, j_q = subsets

    x1 = _pair_codes(a.letters[i_p], b_p.letters[i_p], m_b)
    y1 = _pair_codes(a.letters[i_q], b_q.letters[i_q], m_b)
    x2 = _pair_codes(a.letters[j_p], b_p.letters[j_p], m_b)
    y2 = _pair_codes(a.letters[j_q], b_q.letters[j_q], m_b)

    if size >= 2:
        chi = norm_estimates_agree(collision_norm_estimate(x1),
                                   collision_norm_estimate(y1), size)
    else:
        chi = True
    delta = _exact_distance_sq(x2, y2)
    tau = threshold_tau(max(1, lam * m), size, params.eps_reduced)
    vote = Decision.SAME if (chi and delta <= tau) else Decision.FAR
    return Repetition(sm_a, sm_b, a.letters, b_p.letters, b_q.letters, gamma,
                      lam, chosen, pool, subsets, size, chi, delta, tau,
                      False, vote)


def _majority(votes: list[Decision]) -> Decision:
    far = sum(1 for v in votes if v is Decision.FAR)
    return Decision.FAR if far > len(votes) // 2 else Decision.PRODUCT


def it2p_votes(alice: IndexedSampleSet, bob: IndexedSampleSet,
               params: ITParams, shared: SharedRandomness) -> list[Repetition]:
    tp, reps = params.t_prime, params.votes
    a_blocks = _blocks(alice.letters, tp, 3 * reps)
    b_blocks = _blocks(bob.letters, tp, 3 * reps)
    return [run_repetition(i, a_blocks[3 * i], a_blocks[3 * i + 1],
                           b_blocks[3 * i], b_blocks[3 * i + 1],
                           b_blocks[3 * i + 2], params, shared)
            for i in range(reps)]


def _check_inputs(alice, bob, params):
    if alice.t != bob.t:
        raise ConfigError("parties must hold index-aligned samples")
    if alice.t < 3 * params.votes * params.t_prime:
        raise ConfigError("not enough samples for the configured sample sets")
    if alice.n != params.n or bob.n != params.m:
        raise ConfigError("sample alphabets do not match params")


def it2p(alice: IndexedSampleSet, bob: IndexedSampleSet, params: ITParams,
         seed: int) -> Verdict:
    """Two-way tester; all work is modeled inside the trusted evaluation."""
    _check_inputs(alice, bob, params)
    shared = SharedRandomness(seed)

    def joint(rom_a, rom_b):
        reps = it2p_votes(IndexedSampleSet(rom_a[0], params.n),
                          IndexedSampleSet(rom_b[0], params.m), params, shared)
        return _majority([r.vote for r in reps]), reps

    spec = CircuitSpec(
        gate_count=params.votes * max(
            1, math.ceil(params.t_prime * params.ell_target / params.n)),
        rom_word_bits=64,
        rom_entries=2 * 3 * params.votes * params.t_prime + params.n,
        output_bits=1,
    )
    (decision, reps), evaluation = trusted_evaluate(
        joint, [alice.letters], [bob.letters], spec)
    transcript = Transcript()
    transcript.record("alice", 16)  # shared-randomness seed exchange
    transcript.record_secure(evaluation.modeled_bits)
    return Verdict(decision, transcript,
                   lambda_mean=float(np.mean([r.lam for r in reps])))


def one_way_it2p(alice: IndexedSampleSet, bob: IndexedSampleSet,
                 params: ITParams, seed: int) -> Verdict:
    """One-round variant: Alice ships her restricted samples, Bob decides."""
    _check_inputs(alice, bob, params)
    shared = SharedRandomness(seed)
    n, m, tp, reps = params.n, params.m, params.t_prime, params.votes
    lam_holder = []

    def alice_program():
        a_blocks = _blocks(alice.letters, tp, 3 * reps)
        chunks = []
        for i in range(reps):
            s_a = Multiset.from_letters(a_blocks[3 * i][:min(tp, n)], n)
            sm_a = split_map(s_a, n)
            n_a = sm_a.total_letters
            if n_a >= 1 << 16:
                raise ConfigError("split alphabet too large for wire format")
            a = split_samples(IndexedSampleSet(a_blocks[3 * i + 1], n), sm_a,
                              shared.stream("alice-recast", i))
            isv = indices_set_vector(a, n_a)
            gamma = isv.nonempty_letters()
            ell = min(params.ell_target, n_a)
            universe = shared.stream("oneway-universe", i).choice(
                n_a, size=ell, replace=False)
            live = np.intersect1d(gamma, universe)
            lam = live.size
            if lam == 0:
                chunks.append(struct.pack("<I", 0))
                continue
            pool = np.concatenate([isv[j] for j in live])
            chunks.append(struct.pack("<II", lam, pool.size))
            chunks.append(np.ascontiguousarray(pool, dtype="<u4").tobytes())
            chunks.append(np.ascontiguousarray(
                a.letters[pool], dtype="<u2").tobytes())
        yield Send(b"".join(chunks))
        return None

    def bob_program():
        payload = yield Recv()
        b_blocks = _blocks(bob.letters, tp, 3 * reps)
        offset = 0
        votes = []
        lams = []
        for i in range(reps):
            (lam,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            lams.append(lam)
            if lam == 0:
                votes.append(Decision.SAME)
                continue
            (pool_size,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            pool = np.frombuffer(payload, dtype="<u4", count=pool_size,
                                 offset=offset).astype(np.int64)
            offset += 4 * pool_size
            a_letters = np.frombuffer(payload, dtype="<u2", count=pool_size,
                                      offset=offset).astype(np.int64)
            offset += 2 * pool_size
            if pool_size < 4:
                votes.append(Decision.SAME)
                continue
            s_b = Multiset.from_letters(b_blocks[3 * i][:m], m)
            sm_b = split_map(s_b, m)
            b_p = split_samples(IndexedSampleSet(b_blocks[3 * i + 1], m), sm_b,
                                shared.stream("bob-recast-p", i))
            b_q = split_samples(IndexedSampleSet(b_blocks[3 * i + 2], m), sm_b,
                                shared.stream("bob-recast-q", i))
            rng = shared.stream("oneway-bob", i)
            size = min(params.subset_budget, pool.size // 4)
            order = rng.permutation(pool.size)
            quarters = [order[q * size:(q + 1) * size] for q in range(4)]
            m_b = sm_b.total_letters

            def codes(sel, b_letters):
                return _pair_codes(a_letters[sel], b_letters[pool[sel]], m_b)

            x1 = codes(quarters[0], b_p.letters)
            y1 = codes(quarters[1], b_q.letters)
            x2 = codes(quarters[2], b_p.letters)
            y2 = codes(quarters[3], b_q.letters)
            if size >= 2:
                chi = norm_estimates_agree(collision_norm_estimate(x1),
                                           collision_norm_estimate(y1), size)
            else:
                chi = True
            delta = _exact_distance_sq(x2, y2)
            tau = threshold_tau(max(1, lam * m), size, params.eps_reduced)
            votes.append(Decision.SAME if (chi and delta <= tau)
                         else Decision.FAR)
        lam_holder.append(float(np.mean(lams)))
        return _majority(votes)

    _, bob_out, transcript = run_protocol(alice_program(), bob_program())
    return Verdict(bob_out, transcript, lambda_mean=lam_holder[0])
