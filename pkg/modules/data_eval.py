"""Datasets, file formats, k-means initialization and the two evaluation metrics (pairwise F1, perplexity)."""

import csv
import os
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import pairwise_distances_argmin

from modules.rand_core import (
    INIT,
    make_stream,
    sample_categorical_log,
    sample_dirichlet,
    sample_integers,
    sample_multinomial,
    sample_normal,
    sample_subset,
    sample_uniform,
)
from utils.error_handler import DataIOError, DomainError, ParseError


@dataclass
class PointSet:
    """N real observations, one row each; d columns are modeled independently."""

    values: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DomainError("point values must be a vector or an N x d matrix")
        if not np.all(np.isfinite(values)):
            raise DomainError("point values must be finite")
        self.values = values

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return self.n


@dataclass
class LabelVector:
    """Cluster labels, one per observation."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()

    def __len__(self):
        return int(self.labels.size)

    def __array__(self, dtype=None, copy=None):
        return self.labels if dtype is None else self.labels.astype(dtype)


@dataclass
class Corpus:
    """Bag-of-words documents: each a list of (word id, count) pairs."""

    docs: List[List[Tuple[int, int]]] = field(default_factory=list)
    V: int = 0

    def __post_init__(self):
        for m, doc in enumerate(self.docs):
            for w, c in doc:
                if not 0 <= w < self.V:
                    raise DomainError(f"document {m}: word id {w} outside vocabulary of size {self.V}")
                if c < 1:
                    raise DomainError(f"document {m}: word {w} has count {c} < 1")

    @property
    def M(self):
        return len(self.docs)

    @property
    def n_tokens(self):
        return sum(c for doc in self.docs for _, c in doc)

    def doc_tokens(self, m):
        """Word ids of document m, one entry per token, in file order."""
        doc = self.docs[m]
        if not doc:
            return np.zeros(0, dtype=np.int64)
        words, counts = zip(*doc)
        return np.repeat(np.asarray(words, dtype=np.int64), counts)

    def token_arrays(self):
        """(doc id, word id) arrays over all tokens, document by document."""
        per_doc = [self.doc_tokens(m) for m in range(self.M)]
        docs = np.repeat(np.arange(self.M, dtype=np.int64), [len(t) for t in per_doc])
        words = np.concatenate(per_doc) if per_doc else np.zeros(0, dtype=np.int64)
        return docs, words.astype(np.int64)

    def word_counts(self):
        """Corpus-wide count of each word id."""
        counts = np.zeros(self.V, dtype=np.int64)
        for doc in self.docs:
            for w, c in doc:
                counts[w] += c
        return counts


# Generation


def gen_synth(n, k, mean_low, mean_high, var, seed):
    """Equal-weight univariate Gaussian mixture with Uniform(mean_low, mean_high) means.

    Args:
        n (int): Number of points
        k (int): Number of components, 1 <= k <= n
        mean_low (float): Lower bound of the component means
        mean_high (float): Upper bound of the component means
        var (float): Shared component variance
        seed (int): Generation seed

    Returns:
        tuple: (PointSet, LabelVector)
    """
    if not n >= k >= 1:
        raise DomainError(f"need n >= k >= 1, got n={n}, k={k}")
    if not mean_low < mean_high:
        raise DomainError(f"need mean_low < mean_high, got {mean_low}, {mean_high}")
    if not var > 0:
        raise DomainError(f"variance must be > 0, got {var}")
    stream = make_stream(seed, 0, domain=INIT)
    means = mean_low + (mean_high - mean_low) * (1.0 - sample_uniform(stream, k))
    labels = sample_integers(stream, k, size=n)
    values = means[labels] + sample_normal(stream, np.sqrt(var), size=n)
    logger.debug(f"Generated {n} points from {k} components")
    return PointSet(values, labels=labels), LabelVector(labels)


def gen_synth_corpus(M, n_topics, V, doc_len, seed, topic_conc=0.1, doc_conc=0.5):
    """Synthetic corpus from known topics (LDA-style generative process).

    Args:
        M (int): Number of documents
        n_topics (int): Number of true topics
        V (int): Vocabulary size
        doc_len (int): Tokens per document
        seed (int): Generation seed
        topic_conc (float, optional): Symmetric Dirichlet over words per topic. Defaults to 0.1.
        doc_conc (float, optional): Symmetric Dirichlet over topics per document. Defaults to 0.5.

    Returns:
        Corpus: Generated documents
    """
    if M < 1 or n_topics < 1 or V < 2 or doc_len < 1:
        raise DomainError("need M >= 1, n_topics >= 1, V >= 2, doc_len >= 1")
    stream = make_stream(seed, 1, domain=INIT)
    topics = sample_dirichlet(stream, np.full(V, topic_conc), size=n_topics)
    docs = []
    for _ in range(M):
        if n_topics > 1:
            theta = sample_dirichlet(stream, np.full(n_topics, doc_conc))
        else:
            theta = np.ones(1)
        counts = np.zeros(V, dtype=np.int64)
        for k, n_k in enumerate(sample_multinomial(stream, doc_len, theta)):
            if n_k:
                counts += sample_multinomial(stream, int(n_k), topics[k])
        docs.append([(int(w), int(counts[w])) for w in np.flatnonzero(counts)])
    return Corpus(docs, V)


def split_corpus(corpus, test_fraction=0.1):
    """Split by document order: the last fraction becomes the test set.

    Returns:
        tuple: (train Corpus, test Corpus)
    """
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if corpus.M < 2:
        raise DomainError("need at least two documents to split")
    n_test = min(corpus.M - 1, max(1, int(round(corpus.M * test_fraction))))
    cut = corpus.M - n_test
    return Corpus(corpus.docs[:cut], corpus.V), Corpus(corpus.docs[cut:], corpus.V)


# Initialization


def kmeans(data, k, iters, seed):
    """Lloyd's algorithm from seeded starting centroids.

    Centroids start at k distinct points chosen uniformly by seed. A centroid
    left empty by an update is moved to the point farthest from its current
    centroid.

    Args:
        data (PointSet or array-like): Observations
        k (int): Number of clusters, k <= N
        iters (int): Number of update iterations (0 = assign to initial centroids)
        seed (int): Seed for centroid initialization

    Returns:
        LabelVector: Cluster label of each point
    """
    x = np.asarray(getattr(data, "values", data), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"kmeans needs 1 <= k <= N, got k={k}, N={n}")
    if iters < 0:
        raise DomainError(f"kmeans needs iters >= 0, got {iters}")
    stream = make_stream(seed, 0, domain=INIT)
    centroids = x[sample_subset(stream, n, k)]
    if iters == 0:
        return LabelVector(pairwise_distances_argmin(x, centroids))
    with warnings.catch_warnings():
        # duplicate points can leave fewer distinct centroids than k
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = KMeans(n_clusters=k, init=centroids, n_init=1, max_iter=iters, tol=0.0, algorithm="lloyd").fit(x)
    logger.debug(f"kmeans: k={k} after {model.n_iter_} iterations, inertia {model.inertia_:.4g}")
    return LabelVector(model.labels_)


# Metrics


def _pair_count(sizes):
    sizes = np.asarray(sizes, dtype=np.int64)
    return int((sizes * (sizes - 1) // 2).sum())


def f1_score(pred, truth):
    """Pairwise F1 between two clusterings.

    Precision is the share of co-clustered predicted pairs that are also true
    pairs; recall the share of true pairs recovered. With no predicted and no
    true pairs the score is 1; with exactly one of them empty it is 0.

    Args:
        pred (LabelVector or array-like): Predicted labels
        truth (LabelVector or array-like): Ground-truth labels

    Returns:
        float: F1 in [0, 1]
    """
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.size != truth.size:
        raise DomainError(f"label vectors differ in length: {pred.size} vs {truth.size}")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    p = p.ravel()
    t = t.ravel()
    joint = p.astype(np.int64) * (int(t.max(initial=0)) + 1) + t
    both = _pair_count(np.bincount(joint))
    pred_pairs = _pair_count(np.bincount(p))
    true_pairs = _pair_count(np.bincount(t))
    if pred_pairs == 0 and true_pairs == 0:
        return 1.0
    if pred_pairs == 0 or true_pairs == 0 or both == 0:
        return 0.0
    precision = both / pred_pairs
    recall = both / true_pairs
    return 2.0 * precision * recall / (precision + recall)


def _completion_split(tokens):
    """Alternate tokens into fold-in (even positions) and evaluation (odd) halves."""
    return tokens[0::2], tokens[1::2]


def perplexity(state, weights, hyper, test, stream, passes=50):
    """Held-out perplexity by document completion.

    Each test document's tokens alternate into a fold-in half and an
    evaluation half. Topic assignments of the fold-in half are Gibbs sampled
    with topic-word counts frozen; the document's topic mixture, averaged
    over the second half of the passes, scores the evaluation half.

    Args:
        state (CrfState): Trained sampler state
        weights (GlobalWeights): Current gamma and xi
        hyper (HdpHyper): Model hyperparameters
        test (Corpus): Held-out documents over the same vocabulary
        stream (RngStream): Stream for the fold-in sampling
        passes (int, optional): Fold-in Gibbs passes. Defaults to 50.

    Returns:
        float: exp(-mean log p(w)) over evaluation tokens
    """
    if test.V > hyper.V:
        raise DomainError(f"test vocabulary {test.V} exceeds model vocabulary {hyper.V}")
    counts, totals, tables = state.global_topics()
    V = hyper.V
    # Topic-word predictives; the last row is an unused topic
    phi = np.vstack([
        (counts + hyper.beta) / (totals[:, None] + V * hyper.beta),
        np.full((1, V), 1.0 / V),
    ])
    base = np.append(tables.astype(float), hyper.alpha)
    base /= base.sum()
    prior = weights.gamma * base
    log_phi = np.log(phi)

    total_log = 0.0
    n_eval = 0
    burn = passes // 2
    for m in range(test.M):
        fold, held = _completion_split(test.doc_tokens(m))
        if held.size == 0:
            continue
        n_k = np.zeros(phi.shape[0])
        z = np.empty(fold.size, dtype=np.int64)
        for i, w in enumerate(fold):
            z[i] = sample_categorical_log(stream, np.log(prior) + log_phi[:, w])
            n_k[z[i]] += 1
        theta = np.zeros(phi.shape[0])
        kept = 0
        for sweep in range(passes):
            for i, w in enumerate(fold):
                n_k[z[i]] -= 1
                z[i] = sample_categorical_log(stream, np.log(n_k + prior) + log_phi[:, w])
                n_k[z[i]] += 1
            if sweep >= burn:
                theta += (n_k + prior) / (fold.size + weights.gamma)
                kept += 1
        if kept:
            theta /= kept
        else:
            theta = prior / weights.gamma
        total_log += np.log(theta @ phi[:, held]).sum()
        n_eval += held.size
    if n_eval == 0:
        raise DomainError("perplexity needs at least one evaluation token")
    return float(np.exp(-total_log / n_eval))


def unigram_perplexity(train, test, smoothing=1.0):
    """Perplexity of the smoothed training unigram on the test evaluation halves."""
    counts = train.word_counts()[: max(train.V, test.V)].astype(float)
    if counts.size < test.V:
        counts = np.pad(counts, (0, test.V - counts.size))
    probs = (counts + smoothing) / (counts.sum() + smoothing * counts.size)
    total_log = 0.0
    n_eval = 0
    for m in range(test.M):
        _, held = _completion_split(test.doc_tokens(m))
        total_log += np.log(probs[held]).sum()
        n_eval += held.size
    if n_eval == 0:
        raise DomainError("perplexity needs at least one evaluation token")
    return float(np.exp(-total_log / n_eval))


def has_converged(values, window=10, tol=1e-3):
    """True when the last `window` relative changes of a metric are all below tol."""
    recent = [v for v in values if v is not None][-(window + 1):]
    if len(recent) < window + 1:
        return False
    prev = np.asarray(recent[:-1], dtype=float)
    curr = np.asarray(recent[1:], dtype=float)
    scale = np.maximum(np.abs(prev), 1e-300)
    return bool(np.all(np.abs(curr - prev) / scale < tol))


# File formats


def _open_for_read(path):
    if not os.path.isfile(path):
        raise DataIOError(f"file not found: {path}")
    return open(path, "r", newline="")


def read_points_csv(path):
    """Read points: one comma-separated row per observation, optional header.

    Returns:
        PointSet: Parsed observations
    """
    rows = []
    width = None
    with _open_for_read(path) as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError:
                if line_no == 1:
                    continue
                raise ParseError(f"{path}: non-numeric value in {cells}", line=line_no) from None
            if not all(np.isfinite(values)):
                raise ParseError(f"{path}: non-finite value", line=line_no)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(f"{path}: expected {width} columns, got {len(values)}", line=line_no)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data")
    logger.info(f"Read {len(rows)} points from {path}")
    return PointSet(np.asarray(rows, dtype=float))


def read_labels(path):
    """Read one integer label per line.

    Returns:
        LabelVector: Parsed labels
    """
    labels = []
    with _open_for_read(path) as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                labels.append(int(text))
            except ValueError:
                raise ParseError(f"{path}: expected an integer label, got {text!r}", line=line_no) from None
    if not labels:
        raise ParseError(f"{path}: no data")
    return LabelVector(labels)


def read_bow(path):
    """Read a UCI bag-of-words file (D, W, NNZ header; 1-indexed triples).

    Returns:
        Corpus: Documents with 0-indexed word ids
    """
    with _open_for_read(path) as f:
        lines = [(no, line.strip()) for no, line in enumerate(f, start=1)]
    lines = [(no, text) for no, text in lines if text]
    if len(lines) < 3:
        raise ParseError(f"{path}: missing D/W/NNZ header")
    header = []
    for no, text in lines[:3]:
        try:
            header.append(int(text))
        except ValueError:
            raise ParseError(f"{path}: header value must be an integer, got {text!r}", line=no) from None
    n_docs, n_words, nnz = header
    if n_docs < 0 or n_words < 1 or nnz < 0:
        raise ParseError(f"{path}: invalid header D={n_docs} W={n_words} NNZ={nnz}", line=lines[0][0])

    docs = [[] for _ in range(n_docs)]
    for no, text in lines[3:]:
        parts = text.split()
        if len(parts) != 3:
            raise ParseError(f"{path}: expected 'docID wordID count'", line=no)
        try:
            doc_id, word_id, count = (int(p) for p in parts)
        except ValueError:
            raise ParseError(f"{path}: non-integer triple {parts}", line=no) from None
        if not 1 <= doc_id <= n_docs:
            raise ParseError(f"{path}: docID {doc_id} outside 1..{n_docs}", line=no)
        if not 1 <= word_id <= n_words:
            raise ParseError(f"{path}: wordID {word_id} outside 1..{n_words}", line=no)
        if count < 1:
            raise ParseError(f"{path}: count must be >= 1, got {count}", line=no)
        docs[doc_id - 1].append((word_id - 1, count))
    if len(lines) - 3 != nnz:
        raise ParseError(f"{path}: header declares {nnz} triples, found {len(lines) - 3}")
    corpus = Corpus(docs, n_words)
    logger.info(f"Read {corpus.M} documents, {corpus.n_tokens} tokens, V={corpus.V} from {path}")
    return corpus


def write_points_csv(points, path):
    x = np.asarray(getattr(points, "values", points), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    header = ["x"] if x.shape[1] == 1 else [f"x{c}" for c in range(x.shape[1])]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in x:
            writer.writerow([repr(float(v)) for v in row])


def write_labels(labels, path):
    with open(path, "w") as f:
        for label in np.asarray(labels).ravel():
            f.write(f"{int(label)}\n")


def write_bow(corpus, path):
    nnz = sum(len(doc) for doc in corpus.docs)
    with open(path, "w") as f:
        f.write(f"{corpus.M}\n{corpus.V}\n{nnz}\n")
        for m, doc in enumerate(corpus.docs, start=1):
            for w, c in doc:
                f.write(f"{m} {w + 1} {c}\n")
