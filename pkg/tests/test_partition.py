import sys
import os
import math
from collections import Counter
import pytest
import numpy as np

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Import module to test
from modules.partition import (
    Partition,
    ProcessorCounts,
    bell_number,
    crp_log_eppf,
    enumerate_set_partitions,
    ewens_log_prob,
    exact_posterior_coclustering,
    polya_log_prob,
    configuration_ewens_total,
    size_histogram,
)
from modules.dpmm_sampler import GaussModel
from utils.error_handler import DomainError


class TestPartitionTypes:
    """Tests for Partition, SizeHistogram and ProcessorCounts"""

    def test_from_labels_first_occurrence_order(self):
        """Test that arbitrary labels become dense ids in order of appearance"""
        part = Partition.from_labels([7, 7, 3, 9, 3])
        assert part.assignments.tolist() == [0, 0, 1, 2, 1]
        assert part.n_clusters == 3
        assert part.sizes().tolist() == [2, 2, 1]

    def test_non_dense_ids_rejected(self):
        """Test that gaps in ids raise"""
        with pytest.raises(DomainError):
            Partition(np.array([0, 2]))

    def test_size_histogram(self):
        """Test per-processor size counts"""
        hist = size_histogram([[3], [2, 2]])
        assert hist.counts[0] == Counter({3: 1})
        assert hist.counts[1] == Counter({2: 2})
        assert hist.points(1) == 4
        assert hist.size_multiset() == Counter({2: 2, 3: 1})

    def test_processor_counts_negative(self):
        """Test that negative counts raise"""
        with pytest.raises(DomainError):
            ProcessorCounts([1, -1])


class TestEwensAndPolya:
    """Tests for the configuration probabilities"""

    def test_single_cluster_of_one(self):
        """Test {1} with conc=1 has probability 1"""
        assert ewens_log_prob([1], 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_two_points(self):
        """Test N=2 configurations for conc=1 sum to one"""
        assert math.exp(ewens_log_prob([1, 1], 1.0)) == pytest.approx(0.5)
        assert math.exp(ewens_log_prob([2], 1.0)) == pytest.approx(0.5)

    def test_empty_processor(self):
        """Test that an empty processor contributes nothing"""
        assert ewens_log_prob([], 0.3) == 0.0

    def test_configuration_total_matches_closed_form(self):
        """Test the configuration total against its set-partition sum"""
        for N in range(1, 7):
            for conc in (0.5, 1.0, 2.0):
                closed = sum(
                    math.exp(len(p.sizes()) * math.log(conc) + math.lgamma(conc) - math.lgamma(N + conc))
                    for p in enumerate_set_partitions(N)
                )
                assert configuration_ewens_total(N, conc) == pytest.approx(closed, rel=1e-9)

    def test_polya_single_processor(self):
        """Test that P=1 gives probability one"""
        assert polya_log_prob(ProcessorCounts([5]), 1.3, 1) == pytest.approx(0.0, abs=1e-12)

    def test_polya_sums_to_one(self):
        """Test that the Polya probabilities of all splits of N=4 over P=2 sum to one"""
        total = sum(math.exp(polya_log_prob(ProcessorCounts([k, 4 - k]), 1.0, 2)) for k in range(5))
        assert total == pytest.approx(1.0, rel=1e-12)

    def test_polya_validation(self):
        """Test argument checks"""
        with pytest.raises(DomainError):
            polya_log_prob(ProcessorCounts([1, 2]), 1.0, 3)
        with pytest.raises(DomainError):
            polya_log_prob(ProcessorCounts([1]), 0.0, 1)

    def test_crp_eppf_sums_to_one(self):
        """Test that the CRP EPPF sums to one over all set partitions"""
        total = sum(math.exp(crp_log_eppf(p.sizes(), 1.7)) for p in enumerate_set_partitions(6))
        assert total == pytest.approx(1.0, rel=1e-10)


class TestEnumeration:
    """Tests for set partition enumeration"""

    @pytest.mark.parametrize("N,bell", [(1, 1), (2, 2), (3, 5), (4, 15), (5, 52), (6, 203), (8, 4140)])
    def test_bell_counts(self, N, bell):
        """Test that enumeration yields B_N partitions"""
        assert bell_number(N) == bell
        assert sum(1 for _ in enumerate_set_partitions(N)) == bell

    def test_partitions_unique_and_canonical(self):
        """Test that every partition appears once in canonical labeling"""
        seen = set()
        for part in enumerate_set_partitions(5):
            key = tuple(part.assignments.tolist())
            assert key not in seen
            assert tuple(Partition.from_labels(part.assignments).assignments.tolist()) == key
            seen.add(key)

    def test_limits(self):
        """Test the supported N range"""
        with pytest.raises(DomainError):
            next(enumerate_set_partitions(0))
        with pytest.raises(DomainError):
            next(enumerate_set_partitions(13))


class TestExactPosterior:
    """Tests for the brute-force co-clustering oracle"""

    def test_two_identical_points(self):
        """Test the two-point case against a hand computation"""
        model = GaussModel(0.0, 1.0, 0.01)
        x = np.array([0.0, 0.0])
        together = crp_log_eppf([2], 1.0) + model.log_marginal(x)
        apart = crp_log_eppf([1, 1], 1.0) + 2 * model.log_marginal(x[:1])
        expected = 1.0 / (1.0 + math.exp(apart - together))
        matrix = exact_posterior_coclustering(x, 1.0, model)
        assert matrix[0, 1] == pytest.approx(expected, rel=1e-10)
        assert matrix[0, 0] == 1.0

    def test_matrix_symmetric_and_bounded(self):
        """Test basic matrix properties"""
        x = np.array([0.0, 0.1, 3.0, 3.1, 6.0, 6.2])
        matrix = exact_posterior_coclustering(x, 1.0, GaussModel(3.0, 9.0, 0.04))
        assert np.allclose(matrix, matrix.T)
        assert np.all((matrix >= 0) & (matrix <= 1 + 1e-12))
        assert matrix[0, 1] > 0.8
        assert matrix[0, 4] < 0.1

    def test_too_many_points(self):
        """Test that N > 10 is refused"""
        with pytest.raises(DomainError):
            exact_posterior_coclustering(np.zeros(11), 1.0, GaussModel())
