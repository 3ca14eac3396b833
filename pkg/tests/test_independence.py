"""Independence tester: reduction laws, pairing, protocol end-to-end pieces."""

import math

import numpy as np
import pytest
from scipy import stats

from disttest2p.dist import (
    Distribution,
    IndexedSampleSet,
    Multiset,
    sample,
    split_map,
    uniform_distribution,
)
from disttest2p.harness import ConfigError, Decision, SharedRandomness
from disttest2p.independence import (
    ITParams,
    JointDistribution,
    conditioned,
    conditioned_rows,
    diagonal_joint,
    indices_set_vector,
    it2p,
    it2p_votes,
    one_way_it2p,
    product_joint,
    run_repetition,
    split_joint,
    usi_sample,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def minimal_params(n=20, m=20, eps=1.0, k=2, **kw):
    probe = ITParams(n=n, m=m, t=10 ** 9, eps=eps, k=k, **kw)
    t = math.ceil(probe.min_samples())
    return ITParams(n=n, m=m, t=t, eps=eps, k=k, **kw)


class TestConditioned:
    def test_full_alphabet_identity(self):
        p = Distribution([0.2, 0.3, 0.5])
        assert np.allclose(conditioned(p, [0, 1, 2]).probs, p.probs)

    def test_hand_renormalization(self):
        p = Distribution([0.2, 0.3, 0.5])
        assert np.allclose(conditioned(p, [0, 2]).probs, [2 / 7, 5 / 7])

    def test_point_mass_inside(self):
        p = Distribution([0.0, 1.0, 0.0])
        assert np.allclose(conditioned(p, [1, 2]).probs, [1.0, 0.0])

    def test_zero_mass_rejected(self):
        p = Distribution([0.0, 1.0])
        with pytest.raises(ValueError):
            conditioned(p, [0])


class TestUSISample:
    def test_full_cover(self):
        assert usi_sample(6, 3, 6, rng()) == 3

    def test_empty_first_set(self):
        assert usi_sample(6, 0, 3, rng()) == 0

    def test_mu_4_2_2_law(self):
        # enumerate all C(4,2)=6 subsets: P[|S1 ∩ S2| = 1] = 4/6
        draws = np.array([usi_sample(4, 2, 2, rng(100 + i)) for i in range(20000)])
        freq = (draws == 1).mean()
        assert abs(freq - 2 / 3) < 0.01
        expected = stats.hypergeom(4, 2, 2).pmf(1)
        assert expected == pytest.approx(2 / 3)

    def test_matches_direct_intersection_law(self):
        # Uniform subset of Gamma of the drawn size vs direct |Gamma ∩ U|:
        # chi-square p > 0.01 between the two histograms at 1e5 trials.
        n, a, b, trials = 8, 4, 4, 10 ** 5
        r = rng(2)
        gamma = np.arange(a)
        direct = np.empty(trials, dtype=np.int64)
        viamu = np.empty(trials, dtype=np.int64)
        for i in range(trials):
            u = r.choice(n, size=b, replace=False)
            direct[i] = np.intersect1d(gamma, u).size
            viamu[i] = usi_sample(n, a, b, r)
        table = np.array([np.bincount(direct, minlength=a + 1),
                          np.bincount(viamu, minlength=a + 1)])
        table = table[:, table.sum(axis=0) > 0]
        _, pvalue, _, _ = stats.chi2_contingency(table)
        assert pvalue > 0.01


class TestIndicesSetVector:
    def test_direct_inversion(self):
        s = IndexedSampleSet(np.array([1, 0, 1]), 2)
        isv = indices_set_vector(s, 2)
        assert list(isv[0]) == [1]
        assert list(isv[1]) == [0, 2]

    def test_empty(self):
        s = IndexedSampleSet(np.array([], dtype=np.int64), 3)
        isv = indices_set_vector(s, 3)
        assert all(isv[j].size == 0 for j in range(3))

    def test_degenerate_single_letter(self):
        s = IndexedSampleSet(np.zeros(7, dtype=np.int64), 2)
        isv = indices_set_vector(s, 2)
        assert isv[0].size == 7 and isv[1].size == 0

    def test_partition_property(self):
        r = rng(3)
        s = IndexedSampleSet(r.integers(0, 9, 200), 9)
        isv = indices_set_vector(s, 9)
        seen = np.sort(np.concatenate([isv[j] for j in range(9)]))
        assert np.array_equal(seen, np.arange(200))


class TestJointDistribution:
    def test_diagonal_distance(self):
        joint = diagonal_joint(20, 20)
        assert joint.l1_to_product() == pytest.approx(2 * (1 - 1 / 20))

    def test_product_distance_zero(self):
        joint = product_joint(uniform_distribution(6), uniform_distribution(4))
        assert joint.l1_to_product() == pytest.approx(0.0)

    def test_sample_joint_index_aligned(self):
        joint = diagonal_joint(10, 10)
        a, b = joint.sample_joint(500, rng(4))
        assert np.array_equal(b.letters, a.letters % 10)

    def test_marginals(self):
        joint = diagonal_joint(12, 4)
        assert np.allclose(joint.marginal_rows().probs, np.full(12, 1 / 12))
        assert np.allclose(joint.marginal_cols().probs, np.full(4, 1 / 4))


class TestAlphabetReductionLaws:
    def test_product_conditioning_exact(self):
        # for product joints the reduced pair is exactly equal: p-hat == q-hat
        r = rng(5)
        for n, m in [(8, 5), (12, 12), (6, 3)]:
            p1 = Distribution(r.dirichlet(np.ones(n)))
            p2 = Distribution(r.dirichlet(np.ones(m)))
            joint = product_joint(p1, p2)
            s_a = Multiset.from_letters(r.integers(0, n, 5), n)
            s_b = Multiset.from_letters(r.integers(0, m, 4), m)
            sm_a, sm_b = split_map(s_a, n), split_map(s_b, m)
            split = split_joint(joint, sm_a, sm_b)
            u = np.sort(r.choice(sm_a.total_letters, size=4, replace=False))
            p_hat = conditioned_rows(split, u)
            rows = conditioned(split.marginal_rows(), u)
            q_hat = product_joint(rows, split.marginal_cols())
            assert np.max(np.abs(p_hat.probs - q_hat.probs)) < 1e-12

    def test_diagonal_conditioning_stays_far(self):
        # sampled letter sets keep the reduced distance large >= 90% of draws
        r = rng(6)
        n = m = 12
        joint = diagonal_joint(n, m)
        good = 0
        trials = 200
        for _ in range(trials):
            s_a = Multiset.from_letters(r.integers(0, n, n), n)
            s_b = Multiset.from_letters(r.integers(0, m, m), m)
            sm_a, sm_b = split_map(s_a, n), split_map(s_b, m)
            split = split_joint(joint, sm_a, sm_b)
            ell = min(8, sm_a.total_letters)
            u = np.sort(r.choice(sm_a.total_letters, size=ell, replace=False))
            try:
                p_hat = conditioned_rows(split, u)
            except ValueError:
                continue  # zero-mass set; does not count against the rate
            rows = conditioned(split.marginal_rows(), u)
            q_hat = product_joint(rows, split.marginal_cols())
            distance = float(np.abs(p_hat.probs - q_hat.probs).sum())
            good += distance >= 0.5
        assert good >= 0.9 * trials

    def test_sampled_letter_mass_concentrates(self):
        # ||p||^2 <= U and ell >= 100 U n  =>  mass of U in [ell/4n, 4 ell/n]
        n, trials = 400, 500
        p = uniform_distribution(n)
        u_bound = 1.0 / n
        ell = int(100 * u_bound * n)
        r = rng(7)
        good = 0
        for _ in range(trials):
            u = r.choice(n, size=ell, replace=False)
            mass = float(p.probs[u].sum())
            good += ell / (4 * n) <= mass <= 4 * ell / n
        assert good >= 0.9 * trials


class TestRepetitionPipeline:
    def setup_method(self):
        self.params = minimal_params()
        self.shared = SharedRandomness(11)

    def run_one(self, joint, seed, rep=0):
        a, b = joint.sample_joint(self.params.t, rng(seed))
        tp = self.params.t_prime
        blocks_a = [a.letters[i * tp:(i + 1) * tp] for i in range(3)]
        blocks_b = [b.letters[i * tp:(i + 1) * tp] for i in range(3)]
        return run_repetition(rep, blocks_a[0], blocks_a[1], blocks_b[0],
                              blocks_b[1], blocks_b[2], self.params, self.shared)

    def test_subsets_disjoint_every_run(self):
        joint = product_joint(uniform_distribution(20), uniform_distribution(20))
        for seed in range(30):
            rep = self.run_one(joint, seed)
            if rep.abstained:
                continue
            combined = np.concatenate(rep.subsets)
            assert len(set(combined.tolist())) == combined.size

    def test_pool_indices_carry_chosen_letters(self):
        joint = diagonal_joint(20, 20)
        rep = self.run_one(joint, 3)
        assert not rep.abstained
        chosen = set(rep.chosen.tolist())
        for idx in rep.pool:
            assert int(rep.a_letters[idx]) in chosen

    def test_paired_sample_law_matches_reduced_joint(self):
        # For a fixed reduction (split multisets and letter set), the pairs
        # (A(j), B_p(j)) restricted to the letter set are distributed as the
        # reduced joint: TV < 0.05 over 1e5 accumulated paired draws.
        n = m = 10
        joint = diagonal_joint(n, m)
        r = rng(8)
        s_a = Multiset.from_letters(r.integers(0, n, n), n)
        s_b = Multiset.from_letters(r.integers(0, m, m), m)
        sm_a, sm_b = split_map(s_a, n), split_map(s_b, m)
        m_b = sm_b.total_letters
        chosen = np.sort(r.choice(sm_a.total_letters, size=8, replace=False))

        split = split_joint(joint, sm_a, sm_b)
        p_hat = conditioned_rows(split, chosen)

        codes = []
        wanted = 10 ** 5
        got = 0
        while got < wanted:
            a, b = joint.sample_joint(40000, r)
            a_split = np.asarray(
                sm_a.offsets[a.letters]
                + np.floor(r.random(a.t) * sm_a.bucket_counts[a.letters]),
                dtype=np.int64)
            b_split = np.asarray(
                sm_b.offsets[b.letters]
                + np.floor(r.random(b.t) * sm_b.bucket_counts[b.letters]),
                dtype=np.int64)
            mask = np.isin(a_split, chosen)
            batch = a_split[mask] * m_b + b_split[mask]
            codes.append(batch)
            got += batch.size
        codes = np.concatenate(codes)[:wanted]

        # reduced-joint probabilities mapped onto the same code space
        truth = np.zeros(sm_a.total_letters * m_b)
        for row_idx, row_letter in enumerate(chosen):
            truth[row_letter * m_b:(row_letter + 1) * m_b] = p_hat.probs[row_idx]
        hist = np.bincount(codes, minlength=truth.size) / wanted
        assert 0.5 * np.abs(hist - truth).sum() < 0.05


class TestIT2P:
    def test_precondition_enforced(self):
        with pytest.raises(ConfigError):
            ITParams(n=20, m=20, t=100, eps=1.0, k=2)

    def test_m_larger_than_n_rejected(self):
        with pytest.raises(ConfigError):
            ITParams(n=10, m=20, t=10 ** 6, eps=1.0, k=2)

    def test_product_and_far_verdicts(self):
        params = minimal_params()
        prod = product_joint(uniform_distribution(20), uniform_distribution(20))
        diag = diagonal_joint(20, 20)
        ok_p = ok_f = 0
        for trial in range(40):
            r = rng(900 + trial)
            pa, pb = prod.sample_joint(params.t, r)
            da, db = diag.sample_joint(params.t, r)
            ok_p += it2p(pa, pb, params, trial).decision is Decision.PRODUCT
            ok_f += it2p(da, db, params, trial).decision is Decision.FAR
        assert ok_p >= 28 and ok_f >= 28

    def test_swap_symmetry_for_product(self):
        # swapping B_p and B_q blocks leaves the verdict law unchanged (3 sigma)
        params = minimal_params()
        prod = product_joint(uniform_distribution(20), uniform_distribution(20))
        tp = params.t_prime
        base = swapped = 0
        trials = 100
        for trial in range(trials):
            r = rng(3000 + trial)
            a, b = prod.sample_joint(params.t, r)
            letters = b.letters.copy()
            for i in range(params.votes):
                lo = (3 * i + 1) * tp
                mid = (3 * i + 2) * tp
                hi = (3 * i + 3) * tp
                letters[lo:mid], letters[mid:hi] = (b.letters[mid:hi].copy(),
                                                    b.letters[lo:mid].copy())
            b_swapped = IndexedSampleSet(letters, params.m)
            base += it2p(a, b, params, trial).decision is Decision.PRODUCT
            swapped += it2p(a, b_swapped, params, trial).decision is Decision.PRODUCT
        sigma = math.sqrt(trials * 0.5)
        assert abs(base - swapped) <= 3 * sigma

    def test_lambda_mean_reported(self):
        params = minimal_params()
        prod = product_joint(uniform_distribution(20), uniform_distribution(20))
        a, b = prod.sample_joint(params.t, rng(4))
        v = it2p(a, b, params, 0)
        assert v.lambda_mean is not None and v.lambda_mean > 0


class TestOneWay:
    def test_agreement_with_two_way(self):
        params = minimal_params()
        prod = product_joint(uniform_distribution(20), uniform_distribution(20))
        diag = diagonal_joint(20, 20)
        agree = 0
        trials = 60
        for trial in range(trials):
            r = rng(5000 + trial)
            joint = prod if trial % 2 == 0 else diag
            a, b = joint.sample_joint(params.t, r)
            v1 = it2p(a, b, params, trial)
            v2 = one_way_it2p(a, b, params, trial)
            agree += v1.decision == v2.decision
        assert agree >= 0.9 * trials

    def test_single_message_and_bit_budget(self):
        params = minimal_params()
        diag = diagonal_joint(20, 20)
        a, b = diag.sample_joint(params.t, rng(6))
        v = one_way_it2p(a, b, params, 0)
        assert len(v.transcript.messages) == 1
        assert v.transcript.messages[0][0] == "alice"
        # predicted: sum over repetitions of |I| (log2 n_split + log2 t') bits
        shared = SharedRandomness(0)
        reps = it2p_votes(a, b, params, shared)
        predicted = sum(
            r.pool.size * (math.ceil(math.log2(r.sm_a.total_letters))
                           + math.ceil(math.log2(params.t_prime)))
            for r in reps)
        assert v.transcript.total_bits <= 4 * max(predicted, 1)

    def test_empty_intersection_abstains(self):
        # degenerate: all of Alice's samples carry one letter, ell tiny, so the
        # sampled universe usually misses Gamma entirely -> lambda = 0 message
        params = ITParams(n=20, m=20, t=8000, eps=1.0, k=2, c2=0.0001)
        assert params.ell_target == 1
        a = IndexedSampleSet(np.zeros(8000, dtype=np.int64), 20)
        b = IndexedSampleSet(np.zeros(8000, dtype=np.int64), 20)
        for seed in range(50):
            v = one_way_it2p(a, b, params, seed)
            if v.lambda_mean == 0.0:
                assert v.decision is Decision.PRODUCT
                assert v.transcript.messages[0][1] == 4 + 4 * params.votes
                return
        pytest.fail("no run produced an empty intersection")
