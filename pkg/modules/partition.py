"""Partition combinatorics: size histograms, Ewens / Polya log-probabilities and brute-force oracles."""

from collections import Counter
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import gammaln, logsumexp

from modules.rand_core import log_factorial
from utils.error_handler import DomainError

MAX_ENUMERATION = 12
MAX_ORACLE_POINTS = 10


@dataclass
class Partition:
    """Cluster assignments with dense ids 0..K-1."""

    assignments: np.ndarray

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        if self.assignments.size:
            k = int(self.assignments.max()) + 1
            if self.assignments.min() < 0 or np.unique(self.assignments).size != k:
                raise DomainError("partition ids must be dense in 0..K-1")

    @classmethod
    def from_labels(cls, labels):
        """Relabel arbitrary labels densely in order of first occurrence."""
        labels = np.asarray(labels)
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        return cls(order[inverse])

    @property
    def n_clusters(self):
        return int(self.assignments.max()) + 1 if self.assignments.size else 0

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.n_clusters)

    def __len__(self):
        return int(self.assignments.size)


@dataclass
class SizeHistogram:
    """Per processor j, the map size i -> a_ij (clusters of that size)."""

    counts: List[Counter] = field(default_factory=list)

    @property
    def n_procs(self):
        return len(self.counts)

    def points(self, j):
        """N_j, the number of points on processor j."""
        return sum(i * a for i, a in self.counts[j].items())

    def size_multiset(self):
        """All cluster sizes over all processors."""
        total = Counter()
        for hist in self.counts:
            total.update({i: a for i, a in hist.items() if a})
        return total

    def __eq__(self, other):
        if not isinstance(other, SizeHistogram) or self.n_procs != other.n_procs:
            return False
        return all(+a == +b for a, b in zip(self.counts, other.counts))


@dataclass
class ProcessorCounts:
    """N_j for each processor."""

    n_per_proc: tuple

    def __post_init__(self):
        self.n_per_proc = tuple(int(n) for n in self.n_per_proc)
        if any(n < 0 for n in self.n_per_proc):
            raise DomainError("processor counts must be >= 0")

    @property
    def total(self):
        return sum(self.n_per_proc)

    @property
    def n_procs(self):
        return len(self.n_per_proc)


def size_histogram(per_processor_cluster_sizes):
    """Build the a_ij histogram.

    Args:
        per_processor_cluster_sizes (list): One iterable of cluster sizes per processor

    Returns:
        SizeHistogram: Counts of clusters of each size on each processor
    """
    counts = []
    for sizes in per_processor_cluster_sizes:
        sizes = [int(s) for s in sizes]
        if any(s < 1 for s in sizes):
            raise DomainError("cluster sizes must be positive")
        counts.append(Counter(sizes))
    return SizeHistogram(counts)


def ewens_log_prob(cluster_sizes, conc):
    """Log of the size-configuration probability with a multinomial coefficient.

    (conc)^K * N!/prod n_k! * Gamma(conc)/Gamma(N + conc) * prod_i 1/a_i!.
    The N!/prod n_k! coefficient differs from the textbook Ewens formula
    (which divides by prod n_k); ratio work is unaffected because cluster
    contents never change in a processor move.

    Args:
        cluster_sizes (iterable): Positive cluster sizes on one processor
        conc (float): Concentration, > 0

    Returns:
        float: Log probability; 0 for an empty processor
    """
    if not conc > 0:
        raise DomainError(f"concentration must be > 0, got {conc}")
    sizes = np.asarray(list(cluster_sizes), dtype=np.int64)
    if sizes.size == 0:
        return 0.0
    if np.any(sizes < 1):
        raise DomainError("cluster sizes must be positive")
    n = int(sizes.sum())
    multiplicities = np.array(list(Counter(sizes.tolist()).values()))
    return float(
        sizes.size * np.log(conc)
        + log_factorial(n)
        - log_factorial(sizes).sum()
        + gammaln(conc)
        - gammaln(n + conc)
        - log_factorial(multiplicities).sum()
    )


def polya_log_prob(counts, alpha, P):
    """Log multivariate Polya probability of processor counts N_j.

    N!/prod N_j! * Gamma(alpha)/Gamma(N + alpha) * prod_j Gamma(N_j + alpha/P)/Gamma(alpha/P)

    Args:
        counts (ProcessorCounts): N_j per processor
        alpha (float): Concentration, > 0
        P (int): Number of processors

    Returns:
        float: Log probability
    """
    if P < 1 or not alpha > 0:
        raise DomainError(f"need P >= 1 and alpha > 0, got P={P}, alpha={alpha}")
    n_j = np.asarray(counts.n_per_proc, dtype=float)
    if n_j.size != P:
        raise DomainError(f"expected {P} processor counts, got {n_j.size}")
    n = n_j.sum()
    a = alpha / P
    return float(
        log_factorial(n)
        - log_factorial(n_j).sum()
        + gammaln(alpha)
        - gammaln(n + alpha)
        + (gammaln(n_j + a) - gammaln(a)).sum()
    )


def crp_log_eppf(cluster_sizes, alpha):
    """Log CRP probability of one labeled set partition with these block sizes."""
    sizes = np.asarray(list(cluster_sizes), dtype=float)
    if sizes.size == 0:
        return 0.0
    n = sizes.sum()
    return float(
        sizes.size * np.log(alpha) + gammaln(alpha) - gammaln(n + alpha) + gammaln(sizes).sum()
    )


def bell_number(n):
    """Number of set partitions of n items (Bell triangle)."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for value in row:
            nxt.append(nxt[-1] + value)
        row = nxt
    return row[0]


def enumerate_set_partitions(N):
    """Yield every set partition of {0..N-1} once, as restricted growth strings.

    Args:
        N (int): Number of items, 1 <= N <= 12

    Yields:
        Partition: Canonically labeled partition
    """
    if not 1 <= N <= MAX_ENUMERATION:
        raise DomainError(f"set partition enumeration needs 1 <= N <= {MAX_ENUMERATION}, got {N}")
    labels = [0] * N
    maxima = [0] * N
    while True:
        yield Partition(np.array(labels))
        # Advance the rightmost position that can still grow
        i = N - 1
        while i > 0 and labels[i] > maxima[i - 1]:
            i -= 1
        if i == 0:
            return
        labels[i] += 1
        maxima[i] = max(maxima[i - 1], labels[i])
        for k in range(i + 1, N):
            labels[k] = 0
            maxima[k] = maxima[i]


def configuration_ewens_total(N, conc):
    """Sum of exp(ewens_log_prob) over every size configuration of N.

    The coefficient N!/prod n_k! * prod 1/a_i! counts set partitions
    with a given size configuration, so the total equals
    sum over set partitions of conc^K Gamma(conc)/Gamma(N + conc).
    """
    seen = set()
    total = []
    for part in enumerate_set_partitions(N):
        key = tuple(sorted(part.sizes().tolist()))
        if key in seen:
            continue
        seen.add(key)
        total.append(ewens_log_prob(key, conc))
    return float(np.exp(logsumexp(total)))


def exact_posterior_coclustering(data, alpha, model):
    """Exact posterior co-clustering matrix under a DP mixture, by enumeration.

    Prior is the CRP EPPF; each block contributes model.log_marginal(block).

    Args:
        data (PointSet or array-like): At most 10 observations
        alpha (float): DP concentration
        model (GaussModel): Conjugate observation model

    Returns:
        numpy.ndarray: N x N matrix of P(z_i = z_k | data)
    """
    x = np.asarray(getattr(data, "values", data), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if not 1 <= n <= MAX_ORACLE_POINTS:
        raise DomainError(f"exact posterior needs 1 <= N <= {MAX_ORACLE_POINTS}, got {n}")

    log_weights = []
    rows = []
    for part in enumerate_set_partitions(n):
        labels = part.assignments
        lw = crp_log_eppf(part.sizes(), alpha)
        for c in range(part.n_clusters):
            lw += model.log_marginal(x[labels == c])
        log_weights.append(lw)
        rows.append(labels)

    log_weights = np.asarray(log_weights)
    weights = np.exp(log_weights - logsumexp(log_weights))
    labels = np.asarray(rows)
    matrix = np.empty((n, n))
    for i in range(n):
        matrix[i] = weights @ (labels == labels[:, [i]]).astype(float)
    np.fill_diagonal(matrix, 1.0)
    return matrix
