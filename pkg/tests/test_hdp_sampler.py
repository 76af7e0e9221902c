import sys
import os
import math
from collections import Counter
import pytest
import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid
from scipy.special import gammaln

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Import module to test
from modules.hdp_sampler import (
    CrfState,
    GlobalWeights,
    HdpHyper,
    HdpRatioStats,
    crf_local_sweep,
    crf_log_joint,
    gamma_log_ratio,
    gamma_mh_step,
    hdp_accept_log_r,
    hdp_global_step,
    ratio_stats,
    topic_predictive_log,
)
from modules.data_eval import Corpus, gen_synth_corpus
from modules.initialization import init_crf_state
from modules.rand_core import GLOBAL, make_stream, sample_dirichlet
from modules.validation import gamma_acceptance_comparison
from utils.error_handler import DomainError, InvariantError


@pytest.fixture
def corpus():
    return gen_synth_corpus(12, 3, 20, 15, seed=1)


def _random_seating(corpus, rng, tables_per_doc=3, n_dishes=5):
    """Random tables within each document and random dishes per table."""
    docs, _ = corpus.token_arrays()
    table_of_token = docs * tables_per_doc + rng.integers(0, tables_per_doc, size=docs.size)
    dish_of_table = {int(t): int(rng.integers(0, n_dishes)) for t in np.unique(table_of_token)}
    return table_of_token, dish_of_table


def _shares_dish(state):
    """True when some dish is served at tables of two different documents."""
    for lane in state.lanes:
        docs_of_dish = {}
        for table in lane.tables.values():
            docs_of_dish.setdefault(table.dish, set()).add(table.doc)
        if any(len(docs) > 1 for docs in docs_of_dish.values()):
            return True
    return False


class TestPredictive:
    """Tests for the topic-word predictive"""

    def test_documented_value(self):
        """Test (2 + 1) / (2 + 4) = 0.5"""
        hyper = HdpHyper(1.0, 1, 1.0, 4)
        assert topic_predictive_log(np.array([2, 0, 0, 0]), 0, hyper) == pytest.approx(math.log(0.5))

    def test_empty_topic_is_uniform(self):
        """Test an empty topic predicts 1/V"""
        hyper = HdpHyper(1.0, 1, 0.3, 7)
        assert topic_predictive_log(np.zeros(7), 3, hyper) == pytest.approx(-math.log(7))

    def test_word_out_of_range(self):
        """Test word ids outside the vocabulary raise"""
        with pytest.raises(DomainError):
            topic_predictive_log(np.zeros(4), 4, HdpHyper(1.0, 1, 1.0, 4))

    def test_hyper_validation(self):
        """Test hyperparameter checks"""
        with pytest.raises(DomainError):
            HdpHyper(0.0, 1, 1.0, 4)
        with pytest.raises(DomainError):
            HdpHyper(1.0, 1, 1.0, 1)
        with pytest.raises(DomainError):
            GlobalWeights(1.0, [0.5, 0.6])


class TestAcceptRatio:
    """Tests for the joint dish/xi acceptance ratio"""

    def test_identity_is_zero(self, corpus):
        """Test an unchanged proposal gives zero"""
        hyper = HdpHyper(1.0, 3, 0.5, corpus.V)
        state = init_crf_state(corpus, hyper, "random", 4, seed=3)
        s = ratio_stats(state)
        xi = np.array([0.2, 0.3, 0.5])
        assert hdp_accept_log_r(s, s, xi, xi, hyper) == 0.0

    def test_full_joint_oracle(self, corpus):
        """Test the ratio against differences of the full joint on random configurations"""
        rng = np.random.default_rng(9)
        stream = make_stream(9, 0, GLOBAL)
        for _ in range(100):
            P = int(rng.integers(2, 5))
            hyper = HdpHyper(float(rng.uniform(0.3, 4.0)), P, 0.5, corpus.V)
            table_of_token, dish_of_table = _random_seating(corpus, rng)
            dishes = sorted(set(dish_of_table.values()))
            cur_proc = {d: int(rng.integers(0, P)) for d in dishes}
            prop_proc = {d: int(rng.integers(0, P)) for d in dishes}
            cur = CrfState.from_seating(corpus, table_of_token, dish_of_table, cur_proc, hyper)
            prop = CrfState.from_seating(corpus, table_of_token, dish_of_table, prop_proc, hyper)
            gamma = float(rng.uniform(0.5, 5.0))
            xi = sample_dirichlet(stream, np.full(P, 1.0))
            xi_star = sample_dirichlet(stream, np.full(P, 1.0))
            ratio = hdp_accept_log_r(ratio_stats(cur), ratio_stats(prop), xi, xi_star, hyper)
            diff = crf_log_joint(prop, GlobalWeights(gamma, xi_star)) - crf_log_joint(cur, GlobalWeights(gamma, xi))
            assert abs(ratio - diff) < 1e-8

    def test_full_joint_oracle_small_corpora(self):
        """Test the ratio on 1000 tiny corpora with two processors"""
        rng = np.random.default_rng(21)
        stream = make_stream(21, 0, GLOBAL)
        V = 5
        for _ in range(1000):
            M = int(rng.integers(1, 4))
            docs = []
            for _ in range(M):
                words = Counter(int(w) for w in rng.integers(0, V, size=int(rng.integers(1, 5))))
                docs.append(sorted(words.items()))
            small = Corpus(docs, V)
            hyper = HdpHyper(float(rng.uniform(0.3, 4.0)), 2, float(rng.uniform(0.1, 2.0)), V)
            table_of_token, dish_of_table = _random_seating(small, rng, tables_per_doc=2, n_dishes=3)
            dishes = sorted(set(dish_of_table.values()))
            cur_proc = {d: int(rng.integers(0, 2)) for d in dishes}
            prop_proc = {d: int(rng.integers(0, 2)) for d in dishes}
            cur = CrfState.from_seating(small, table_of_token, dish_of_table, cur_proc, hyper)
            prop = CrfState.from_seating(small, table_of_token, dish_of_table, prop_proc, hyper)
            gamma = float(rng.uniform(0.5, 5.0))
            xi = sample_dirichlet(stream, np.full(2, 1.0))
            xi_star = sample_dirichlet(stream, np.full(2, 1.0))
            ratio = hdp_accept_log_r(ratio_stats(cur), ratio_stats(prop), xi, xi_star, hyper)
            diff = crf_log_joint(prop, GlobalWeights(gamma, xi_star)) - crf_log_joint(cur, GlobalWeights(gamma, xi))
            assert abs(ratio - diff) < 1e-8

    def test_mismatched_processors(self, corpus):
        """Test that xi must match the processor count"""
        hyper = HdpHyper(1.0, 2, 0.5, corpus.V)
        s = ratio_stats(init_crf_state(corpus, hyper, "random", 3, seed=1))
        with pytest.raises(DomainError):
            hdp_accept_log_r(s, s, [0.5, 0.5], [0.2, 0.3, 0.5], hyper)


class TestGammaStep:
    """Tests for the gamma update"""

    def test_single_customer_ratio_is_zero(self):
        """Test one document with one customer at one table"""
        assert gamma_log_ratio(1.3, 4.2, 1, [1]) == pytest.approx(0.0, abs=1e-12)

    def test_ratio_matches_formula(self):
        """Test against a direct evaluation"""
        g, gs, T, n = 1.5, 2.5, 7, np.array([4.0, 9.0, 2.0])
        expected = T * math.log(gs / g) + 3 * (math.lgamma(gs) - math.lgamma(g))
        expected += float((gammaln(n + g) - gammaln(n + gs)).sum())
        assert gamma_log_ratio(g, gs, T, n) == pytest.approx(expected, rel=1e-12)

    def test_invalid_step(self):
        """Test that the random-walk scale must be positive"""
        s = HdpRatioStats(np.array([2]), [Counter()], [[Counter()]], np.array([[3]]))
        with pytest.raises(DomainError):
            gamma_mh_step(GlobalWeights.uniform(1.0, 1), s, 1, make_stream(1, 0, GLOBAL), 0.0)

    def test_document_count_checked(self):
        """Test the statistics must cover M documents"""
        s = HdpRatioStats(np.array([2]), [Counter()], [[Counter()]], np.array([[3]]))
        with pytest.raises(DomainError):
            gamma_mh_step(GlobalWeights.uniform(1.0, 1), s, 2, make_stream(1, 0, GLOBAL), 0.5)

    @staticmethod
    def _ks_statistic(n_kept, seed, thin=10, burn=1000):
        doc_totals = np.array([10, 10])
        T = 6
        s = HdpRatioStats(np.array([T]), [Counter()], [[Counter(), Counter()]], doc_totals[None, :])
        grid = np.linspace(1e-6, 80.0, 400001)
        log_f = T * np.log(grid) + 2 * gammaln(grid) - gammaln(doc_totals[:, None] + grid).sum(axis=0)
        cdf = cumulative_trapezoid(np.exp(log_f - log_f.max()), grid, initial=0.0)
        cdf /= cdf[-1]
        weights = GlobalWeights.uniform(1.0, 1)
        stream = make_stream(seed, 0, GLOBAL)
        draws = []
        for step in range(burn + n_kept * thin):
            weights, _ = gamma_mh_step(weights, s, 2, stream, 0.6)
            if step >= burn and (step - burn) % thin == 0:
                draws.append(weights.gamma)
        return stats.kstest(draws, lambda x: np.interp(x, grid, cdf)).statistic

    def test_stationary_distribution(self):
        """Test that the chain on gamma matches its target density (reduced run)"""
        assert self._ks_statistic(4000, seed=12) < 0.05

    @pytest.mark.slow
    def test_stationary_distribution_full(self):
        """Test stationarity at 1e5 kept samples"""
        assert self._ks_statistic(100000, seed=13) < 0.05

    def test_comparison_rows(self, corpus):
        """Test the reduced and full-joint gamma ratios side by side"""
        hyper = HdpHyper(1.0, 2, 0.5, corpus.V)
        state = init_crf_state(corpus, hyper, "random", 3, seed=4)
        weights = GlobalWeights.uniform(1.5, 2)
        rows = gamma_acceptance_comparison(state, weights, [1.5, 3.0])
        assert set(rows[0]) == {"gamma_star", "reduced", "full", "full_with_prior"}
        assert rows[0]["reduced"] == pytest.approx(0.0, abs=1e-12)
        assert rows[0]["full"] == pytest.approx(0.0, abs=1e-9)
        assert np.isfinite(rows[1]["full_with_prior"])


class TestLocalSweep:
    """Tests for the per-lane franchise sweep"""

    def test_counts_consistent_after_sweeps(self, corpus):
        """Test incremental counts match a rebuild after sweeps and global steps"""
        hyper = HdpHyper(1.0, 3, 0.5, corpus.V)
        state = init_crf_state(corpus, hyper, "random", 4, seed=2)
        weights = GlobalWeights.uniform(1.0, 3)
        lanes = [make_stream(2, j) for j in range(3)]
        g = make_stream(2, 0, GLOBAL)
        for _ in range(10):
            for j in range(3):
                crf_local_sweep(state, weights, j, lanes[j], debug=True)
            weights, _ = hdp_global_step(state, weights, g)
            state.check()
        assert sum(state.n_per_proc()) == corpus.n_tokens

    def test_tables_stay_in_their_document(self, corpus):
        """Test every token's table belongs to its document"""
        hyper = HdpHyper(1.0, 2, 0.5, corpus.V)
        state = init_crf_state(corpus, hyper, "kmeans", 3, seed=5)
        weights = GlobalWeights.uniform(2.0, 2)
        for j in range(2):
            crf_local_sweep(state, weights, j, make_stream(5, j))
        for lane in state.lanes:
            for pos in range(lane.tok.size):
                assert lane.tables[int(lane.table[pos])].doc == lane.doc[pos]

    def test_empty_lane(self):
        """Test that a lane with no tokens is a no-op"""
        corpus = Corpus([[(0, 2), (1, 1)], [(2, 3)]], 4)
        hyper = HdpHyper(1.0, 2, 0.5, 4)
        state = CrfState.from_seating(corpus, [0, 0, 0, 1, 1, 1], {0: 0, 1: 0}, {0: 0}, hyper)
        assert crf_local_sweep(state, GlobalWeights.uniform(1.0, 2), 1, make_stream(1, 1)) == 0

    def test_check_detects_corruption(self, corpus):
        """Test that a tampered table count is caught"""
        state = init_crf_state(corpus, HdpHyper(1.0, 1, 0.5, corpus.V), "random", 2, seed=1)
        lane = state.lanes[0]
        next(iter(lane.tables.values())).n += 1
        with pytest.raises(InvariantError):
            state.check()

    def test_single_token_document(self):
        """Test a one-token corpus always has one table serving one dish"""
        corpus = Corpus([[(1, 1)]], 3)
        hyper = HdpHyper(1.0, 2, 0.5, 3)
        state = init_crf_state(corpus, hyper, "random", 1, seed=4)
        weights = GlobalWeights.uniform(1.0, 2)
        lanes = [make_stream(4, j) for j in range(2)]
        g = make_stream(4, 0, GLOBAL)
        for _ in range(200):
            for j in range(2):
                crf_local_sweep(state, weights, j, lanes[j])
            weights, _ = hdp_global_step(state, weights, g)
            weights, _ = gamma_mh_step(weights, ratio_stats(state), corpus.M, g, 0.5)
            assert state.t_total == 1
            assert state.n_topics == 1

    @pytest.mark.parametrize("P", [1, 2])
    def test_shared_vocabulary_shares_dish(self, P):
        """Test two documents with the same words mostly serve a common dish"""
        corpus = Corpus([[(0, 10), (1, 10)], [(0, 10), (1, 10)]], 20)
        hyper = HdpHyper(1.0, P, 0.1, 20)
        state = init_crf_state(corpus, hyper, "random", 2, seed=6)
        weights = GlobalWeights.uniform(1.0, P)
        lanes = [make_stream(6, j) for j in range(P)]
        g = make_stream(6, 0, GLOBAL)
        shared = 0
        for it in range(320):
            for j in range(P):
                crf_local_sweep(state, weights, j, lanes[j])
            weights, _ = hdp_global_step(state, weights, g)
            if it >= 20:
                shared += _shares_dish(state)
        assert shared / 300 > 0.9


class TestGlobalStep:
    """Tests for the dish reallocation move"""

    def test_single_processor_identity(self, corpus):
        """Test that P=1 returns the inputs unchanged"""
        hyper = HdpHyper(1.0, 1, 0.5, corpus.V)
        state = init_crf_state(corpus, hyper, "random", 3, seed=1)
        weights = GlobalWeights.uniform(1.0, 1)
        before = state.to_plain()
        new_weights, result = hdp_global_step(state, weights, make_stream(1, 0, GLOBAL))
        assert new_weights is weights
        assert result.accepted and result.moved == 0
        assert state.to_plain() == before

    def test_reject_leaves_state_unchanged(self, corpus):
        """Test rejected proposals keep the state and weights"""
        hyper = HdpHyper(1.0, 3, 0.5, corpus.V)
        state = init_crf_state(corpus, hyper, "random", 5, seed=6)
        weights = GlobalWeights.uniform(1.0, 3)
        stream = make_stream(6, 0, GLOBAL)
        seen_reject = False
        for _ in range(100):
            before = state.to_plain()
            new_weights, result = hdp_global_step(state, weights, stream)
            if not result.accepted:
                seen_reject = True
                assert new_weights is weights
                assert state.to_plain() == before
            weights = new_weights
        assert seen_reject

    def test_dishes_of_tokens_preserved(self, corpus):
        """Test that moving dishes changes processors but not topic assignments"""
        hyper = HdpHyper(1.0, 4, 0.5, corpus.V)
        state = init_crf_state(corpus, hyper, "random", 6, seed=7)
        weights = GlobalWeights.uniform(1.0, 4)
        _, dish_before = state.assignments()
        stream = make_stream(7, 0, GLOBAL)
        for _ in range(30):
            weights, _ = hdp_global_step(state, weights, stream)
        _, dish_after = state.assignments()
        assert np.array_equal(dish_before, dish_after)
        state.check()

    def test_move_subset(self, corpus):
        """Test that at most move_subset dishes change processor"""
        hyper = HdpHyper(1.0, 3, 0.5, corpus.V)
        state = init_crf_state(corpus, hyper, "random", 6, seed=8)
        weights = GlobalWeights.uniform(1.0, 3)
        stream = make_stream(8, 0, GLOBAL)
        for _ in range(30):
            weights, result = hdp_global_step(state, weights, stream, move_subset=2)
            assert result.moved <= 2


    def test_acceptance_reproducible(self, corpus):
        """Test 500 global steps give the same accept flags and state for the same seed"""
        hyper = HdpHyper(1.0, 3, 0.5, corpus.V)
        runs = []
        for _ in range(2):
            state = init_crf_state(corpus, hyper, "random", 5, seed=9)
            weights = GlobalWeights.uniform(1.0, 3)
            stream = make_stream(9, 0, GLOBAL)
            flags = []
            for _ in range(500):
                weights, result = hdp_global_step(state, weights, stream)
                flags.append((result.accepted, result.log_r, result.moved))
            runs.append((flags, state.to_plain(), weights.xi.tolist()))
        assert runs[0] == runs[1]
