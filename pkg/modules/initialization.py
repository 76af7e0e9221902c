"""Starting states for sampler runs."""

import numpy as np
from loguru import logger

from modules.data_eval import kmeans
from modules.dpmm_sampler import DpState
from modules.hdp_sampler import CrfState
from modules.rand_core import INIT, make_stream, sample_integers
from utils.error_handler import DomainError


def init_dp_state(values, model, alpha, P, kind, k, seed, kmeans_iters=20):
    """Initial DPMM state for a run.

    ``kmeans``: clusters from k-means with k capped at N. ``random``: each
    point gets one of k labels uniformly. Cluster c starts on processor c mod P.

    Args:
        values (numpy.ndarray): N x d observations
        model (GaussModel): Likelihood and prior
        alpha (float): DP concentration
        P (int): Number of processors
        kind (str): "kmeans" or "random"
        k (int): Number of initial clusters
        seed (int): Master seed
        kmeans_iters (int, optional): Lloyd iterations. Defaults to 20.

    Returns:
        DpState: Consistent state
    """
    n = values.shape[0]
    if n == 0:
        labels = np.zeros(0, dtype=np.int64)
    elif kind == "kmeans":
        labels = np.asarray(kmeans(values, min(k, n), kmeans_iters, seed))
    elif kind == "random":
        labels = sample_integers(make_stream(seed, 3, INIT), k, size=n).astype(np.int64)
    else:
        raise DomainError(f"unknown init kind {kind!r}")
    return DpState.from_assignments(values, labels, labels % P, model, alpha, P)


def init_crf_state(corpus, hyper, kind, k, seed, kmeans_iters=20):
    """Initial seating for a run.

    ``random``: each token gets one of k dishes uniformly, one table per
    (document, dish). ``kmeans``: documents are clustered on normalized word
    frequencies and each document sits at one table serving its cluster's
    dish. Dish d starts on processor d mod P.
    """
    docs, _ = corpus.token_arrays()
    if kind == "random":
        stream = make_stream(seed, 2, domain=INIT)
        dish_of_token = sample_integers(stream, k, size=docs.size).astype(np.int64)
        keys, table_of_token = np.unique(docs * k + dish_of_token, return_inverse=True)
        dish_of_table = {t: int(key % k) for t, key in enumerate(keys.tolist())}
    elif kind == "kmeans":
        features = np.zeros((corpus.M, corpus.V))
        for m, doc in enumerate(corpus.docs):
            for w, c in doc:
                features[m, w] = c
        lengths = features.sum(axis=1, keepdims=True)
        features = np.divide(features, lengths, out=np.zeros_like(features), where=lengths > 0)
        k_eff = min(k, corpus.M)
        if k_eff < k:
            logger.warning(f"kmeans init: only {corpus.M} documents, using {k_eff} topics")
        labels = np.asarray(kmeans(features, k_eff, kmeans_iters, seed))
        table_of_token = docs.copy()
        dish_of_table = {m: int(labels[m]) for m in np.unique(docs).tolist()}
    else:
        raise DomainError(f"unknown init kind {kind!r}")
    proc_of_dish = {d: d % hyper.P for d in set(dish_of_table.values())}
    return CrfState.from_seating(corpus, table_of_token, dish_of_table, proc_of_dish, hyper)
