import sys
import os
import pytest
import numpy as np

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Import module to test
from modules.data_eval import (
    Corpus,
    LabelVector,
    PointSet,
    f1_score,
    gen_synth,
    gen_synth_corpus,
    has_converged,
    kmeans,
    perplexity,
    read_bow,
    read_labels,
    read_points_csv,
    split_corpus,
    unigram_perplexity,
    write_bow,
    write_labels,
    write_points_csv,
)
from modules.hdp_sampler import GlobalWeights, HdpHyper
from modules.rand_core import EVAL, INIT, make_stream, sample_subset
from utils.error_handler import DataIOError, DomainError, ParseError


class _FixedTopics:
    """Stand-in state exposing only global topic counts."""

    def __init__(self, counts, tables):
        self.counts = np.asarray(counts, dtype=np.int64)
        self.tables = np.asarray(tables, dtype=np.int64)

    def global_topics(self):
        return self.counts, self.counts.sum(axis=1), self.tables


class TestF1:
    """Tests for pairwise F1"""

    def test_identical(self):
        """Test identical labelings score 1"""
        assert f1_score([0, 0, 1, 1], [5, 5, 9, 9]) == 1.0

    def test_all_singletons_against_one_cluster(self):
        """Test no predicted pairs against all true pairs scores 0"""
        assert f1_score([0, 1, 2, 3], [0, 0, 0, 0]) == 0.0

    def test_both_without_pairs(self):
        """Test two all-singleton labelings score 1"""
        assert f1_score([0, 1, 2], [2, 1, 0]) == 1.0

    def test_partial(self):
        """Test a hand-computed case"""
        # pred pairs {01, 23}, true pairs {01, 02, 12}: precision 1/2, recall 1/3
        assert f1_score([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(0.4)

    def test_length_mismatch(self):
        """Test unequal lengths raise"""
        with pytest.raises(DomainError):
            f1_score([0, 1], [0])


class TestGeneration:
    """Tests for the synthetic generators"""

    def test_gen_synth_deterministic(self):
        """Test the same seed gives the same data"""
        a, la = gen_synth(100, 4, 0.0, 20.0, 1.0, seed=3)
        b, lb = gen_synth(100, 4, 0.0, 20.0, 1.0, seed=3)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(np.asarray(la), np.asarray(lb))
        assert a.n == 100 and a.dim == 1

    def test_gen_synth_validation(self):
        """Test argument checks"""
        with pytest.raises(DomainError):
            gen_synth(2, 3, 0.0, 1.0, 1.0, seed=1)
        with pytest.raises(DomainError):
            gen_synth(10, 2, 1.0, 1.0, 1.0, seed=1)

    def test_corpus_shape(self):
        """Test every document has doc_len tokens inside the vocabulary"""
        corpus = gen_synth_corpus(8, 3, 30, 25, seed=2)
        assert corpus.M == 8
        assert corpus.n_tokens == 8 * 25
        assert all(0 <= w < 30 for doc in corpus.docs for w, _ in doc)

    def test_split(self):
        """Test the last documents become the test set"""
        corpus = gen_synth_corpus(10, 2, 20, 10, seed=2)
        train, test = split_corpus(corpus, 0.2)
        assert (train.M, test.M) == (8, 2)
        assert test.docs == corpus.docs[8:]


class TestKmeans:
    """Tests for k-means initialization"""

    def test_separated_clusters(self):
        """Test two well separated groups are recovered from any start"""
        x = np.concatenate([np.linspace(0, 1, 10), np.linspace(100, 101, 10)])
        for seed in range(5):
            labels = kmeans(x, 2, 10, seed=seed)
            assert f1_score(labels, np.repeat([0, 1], 10)) == 1.0

    def test_k_equals_n(self):
        """Test k = N gives every point its own cluster"""
        labels = np.asarray(kmeans(np.arange(5.0), 5, 5, seed=2))
        assert np.unique(labels).size == 5

    def test_zero_iterations_assigns_to_initial_centroids(self):
        """Test iters=0 only assigns each point to its nearest starting point"""
        x = np.array([0.0, 0.4, 2.0, 2.6, 7.0, 7.5, 9.0])
        for seed in range(4):
            start = x[sample_subset(make_stream(seed, 0, INIT), x.size, 3)]
            expected = np.abs(x[:, None] - start[None, :]).argmin(axis=1)
            assert np.array_equal(np.asarray(kmeans(x, 3, 0, seed=seed)), expected)

    def test_empty_centroid_reseeded(self):
        """Test a centroid left without points moves to the far point"""
        # most seeds start both centroids on copies of 0, leaving one empty
        x = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 10.0])
        for seed in range(8):
            labels = kmeans(x, 2, 5, seed=seed)
            assert f1_score(labels, [0, 0, 0, 0, 0, 1]) == 1.0
            assert np.unique(np.asarray(labels)).size == 2

    def test_negative_iterations(self):
        """Test a negative iteration count raises"""
        with pytest.raises(DomainError):
            kmeans(np.arange(3.0), 2, -1, seed=1)

    def test_k_too_large(self):
        """Test k > N raises"""
        with pytest.raises(DomainError):
            kmeans(np.arange(3.0), 4, 5, seed=1)


class TestPerplexity:
    """Tests for held-out perplexity"""

    def test_uniform_topic_gives_vocabulary_size(self):
        """Test a model whose every topic is uniform scores exactly V"""
        V = 6
        hyper = HdpHyper(1.0, 1, 0.5, V)
        state = _FixedTopics(np.full((1, V), 4), [2])
        test = Corpus([[(0, 3), (2, 2), (5, 1)], [(1, 4)]], V)
        value = perplexity(state, GlobalWeights.uniform(1.0, 1), hyper, test, make_stream(1, 0, EVAL), passes=4)
        assert value == pytest.approx(V, rel=1e-9)

    def test_concentrated_topic_beats_uniform(self):
        """Test a topic matching the test words scores below V"""
        V = 6
        hyper = HdpHyper(1.0, 1, 0.01, V)
        state = _FixedTopics([[100, 100, 0, 0, 0, 0]], [5])
        test = Corpus([[(0, 4), (1, 4)]], V)
        value = perplexity(state, GlobalWeights.uniform(1.0, 1), hyper, test, make_stream(2, 0, EVAL), passes=10)
        assert value < 3.0

    def test_no_evaluation_tokens(self):
        """Test single-token documents leave nothing to score"""
        hyper = HdpHyper(1.0, 1, 0.5, 3)
        with pytest.raises(DomainError):
            perplexity(
                _FixedTopics([[1, 1, 1]], [1]), GlobalWeights.uniform(1.0, 1), hyper,
                Corpus([[(0, 1)]], 3), make_stream(1, 0, EVAL),
            )

    def test_unigram_baseline(self):
        """Test the uniform unigram on uniform counts scores V"""
        train = Corpus([[(0, 2), (1, 2), (2, 2), (3, 2)]], 4)
        test = Corpus([[(0, 1), (1, 1), (2, 1), (3, 1)]], 4)
        assert unigram_perplexity(train, test) == pytest.approx(4.0)


class TestConvergence:
    """Tests for the metric convergence rule"""

    def test_flat_series(self):
        """Test a constant series converges"""
        assert has_converged([5.0] * 11, window=10, tol=1e-3)

    def test_too_short(self):
        """Test fewer than window + 1 values never converge"""
        assert not has_converged([5.0] * 10, window=10, tol=1e-3)

    def test_moving_series(self):
        """Test a large recent change blocks convergence"""
        assert not has_converged([5.0] * 10 + [6.0], window=10, tol=1e-3)

    def test_none_values_skipped(self):
        """Test iterations without a metric are ignored"""
        assert has_converged([1.0, None, 1.0, None, 1.0], window=2, tol=1e-3)


class TestFileFormats:
    """Tests for the readers and writers"""

    def test_bow_parse(self, tmp_path):
        """Test the documented two-document file"""
        path = tmp_path / "docs.txt"
        path.write_text("2\n3\n2\n1 1 2\n2 3 1\n")
        corpus = read_bow(str(path))
        assert (corpus.M, corpus.V) == (2, 3)
        assert corpus.docs == [[(0, 2)], [(2, 1)]]
        assert corpus.n_tokens == 3

    def test_bow_crlf(self, tmp_path):
        """Test Windows line endings parse the same"""
        path = tmp_path / "docs.txt"
        path.write_bytes(b"2\r\n3\r\n2\r\n1 1 2\r\n2 3 1\r\n")
        assert read_bow(str(path)).docs == [[(0, 2)], [(2, 1)]]

    def test_bow_errors(self, tmp_path):
        """Test malformed triples report their line"""
        path = tmp_path / "docs.txt"
        path.write_text("1\n3\n1\n1 4 2\n")
        with pytest.raises(ParseError) as e:
            read_bow(str(path))
        assert e.value.line == 4
        path.write_text("1\n3\n2\n1 1 2\n")
        with pytest.raises(ParseError):
            read_bow(str(path))

    def test_bow_round_trip(self, tmp_path):
        """Test write_bow output reads back"""
        corpus = gen_synth_corpus(5, 2, 12, 8, seed=4)
        write_bow(corpus, str(tmp_path / "c.txt"))
        back = read_bow(str(tmp_path / "c.txt"))
        assert back.docs == corpus.docs and back.V == corpus.V

    def test_points_header_and_rows(self, tmp_path):
        """Test an optional header line and 2-column rows"""
        path = tmp_path / "p.csv"
        path.write_text("x,y\n1.0,2.0\n3.5,-1\n")
        points = read_points_csv(str(path))
        assert points.values.tolist() == [[1.0, 2.0], [3.5, -1.0]]

    def test_points_empty(self, tmp_path):
        """Test a header-only file has no data"""
        path = tmp_path / "p.csv"
        path.write_text("x\n")
        with pytest.raises(ParseError, match="no data"):
            read_points_csv(str(path))

    def test_points_ragged(self, tmp_path):
        """Test rows of different width"""
        path = tmp_path / "p.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(ParseError) as e:
            read_points_csv(str(path))
        assert e.value.line == 2

    def test_missing_file(self, tmp_path):
        """Test missing inputs are I/O errors"""
        with pytest.raises(DataIOError):
            read_labels(str(tmp_path / "none.txt"))

    def test_points_and_labels_round_trip(self, tmp_path):
        """Test the writers produce files the readers accept"""
        points, labels = gen_synth(20, 2, 0.0, 5.0, 1.0, seed=6)
        write_points_csv(points, str(tmp_path / "p.csv"))
        write_labels(labels, str(tmp_path / "l.txt"))
        assert np.allclose(read_points_csv(str(tmp_path / "p.csv")).values, points.values)
        assert np.array_equal(np.asarray(read_labels(str(tmp_path / "l.txt"))), np.asarray(labels))

    def test_types_validate(self):
        """Test value checks on the data types"""
        with pytest.raises(DomainError):
            PointSet(np.array([1.0, np.nan]))
        with pytest.raises(DomainError):
            Corpus([[(3, 1)]], 3)
        assert len(LabelVector([1, 2, 3])) == 3
