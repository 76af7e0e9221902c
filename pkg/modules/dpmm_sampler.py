"""Auxiliary-variable DPMM sampler.

Each of P lanes runs a collapsed Gibbs sweep over its own points with
concentration alpha/P. A global Metropolis-Hastings step reassigns whole
clusters to lanes. Cluster ids are unique across lanes: a lane j mints ids
``seq * P + j`` so lanes never need to coordinate.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import List

import numpy as np
from loguru import logger
from scipy.special import gammaln

from modules.partition import ProcessorCounts, ewens_log_prob, polya_log_prob, size_histogram
from modules.rand_core import (
    sample_categorical_log,
    sample_dirichlet,
    sample_integers,
    sample_subset,
    sample_uniform,
)
from utils.error_handler import DomainError, InvariantError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussModel:
    """Normal likelihood with known variance and a Normal prior on the mean."""

    mu0: float = 0.0
    tau2: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.tau2 > 0 or not self.sigma2 > 0:
            raise DomainError(f"tau2 and sigma2 must be > 0, got {self.tau2}, {self.sigma2}")

    def log_predictive(self, n, s, x):
        """Posterior predictive log density of x for K clusters at once.

        Args:
            n (numpy.ndarray): (K,) member counts
            s (numpy.ndarray): (K, d) member sums
            x (numpy.ndarray): (d,) observation

        Returns:
            numpy.ndarray: (K,) log densities, summed over dimensions
        """
        prec = 1.0 / self.tau2 + n / self.sigma2
        mean = (self.mu0 / self.tau2 + s / self.sigma2) / prec[:, None]
        var = self.sigma2 + 1.0 / prec
        resid = x[None, :] - mean
        return -0.5 * (x.size * (LOG_2PI + np.log(var)) + (resid ** 2).sum(axis=1) / var)

    def log_marginal(self, x):
        """Log evidence of a block of points assumed to share one cluster mean."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        if n == 0:
            return 0.0
        prec = 1.0 / self.tau2 + n / self.sigma2
        b = self.mu0 / self.tau2 + x.sum(axis=0) / self.sigma2
        quad = (x ** 2).sum(axis=0) / self.sigma2 + self.mu0 ** 2 / self.tau2 - b ** 2 / prec
        per_dim = -0.5 * (n * (LOG_2PI + np.log(self.sigma2)) + np.log(self.tau2 * prec) + quad)
        return float(per_dim.sum())


@dataclass
class ClusterStat:
    n: int = 0
    sum: np.ndarray = field(default_factory=lambda: np.zeros(1))


def predictive_log_density(model, stat, x):
    """Closed-form Normal posterior predictive of x given a cluster's stats (None = empty)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = 0 if stat is None else stat.n
    s = np.zeros_like(x) if stat is None else np.atleast_1d(np.asarray(stat.sum, dtype=float))
    return float(model.log_predictive(np.array([n], dtype=float), s[None, :], x)[0])


class ClusterTable:
    """Slot table of live cluster statistics for one lane."""

    def __init__(self, dim, capacity=8):
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.n = np.zeros(capacity, dtype=np.int64)
        self.s = np.zeros((capacity, dim))
        self.slot = {}

    def __len__(self):
        return len(self.slot)

    def __contains__(self, cid):
        return cid in self.slot

    def _create(self, cid):
        free = np.flatnonzero(self.ids < 0)
        if free.size == 0:
            cap = self.ids.size
            self.ids = np.concatenate([self.ids, np.full(cap, -1, dtype=np.int64)])
            self.n = np.concatenate([self.n, np.zeros(cap, dtype=np.int64)])
            self.s = np.vstack([self.s, np.zeros_like(self.s)])
            free = np.array([cap])
        slot = int(free[0])
        self.ids[slot] = cid
        self.slot[cid] = slot
        return slot

    def _free(self, cid):
        slot = self.slot.pop(cid)
        self.ids[slot] = -1
        self.n[slot] = 0
        self.s[slot] = 0.0

    def add(self, cid, x):
        slot = self.slot.get(cid)
        if slot is None:
            slot = self._create(cid)
        self.n[slot] += 1
        self.s[slot] += x

    def remove(self, cid, x):
        """Remove one member; returns True when the cluster was deleted."""
        slot = self.slot[cid]
        self.n[slot] -= 1
        if self.n[slot] == 0:
            self._free(cid)
            return True
        self.s[slot] -= x
        return False

    def live(self):
        return np.flatnonzero(self.ids >= 0)

    def sizes(self):
        """{cluster id: size} in slot order."""
        live = self.live()
        return dict(zip(self.ids[live].tolist(), self.n[live].tolist()))

    def pop_stat(self, cid):
        slot = self.slot[cid]
        stat = ClusterStat(int(self.n[slot]), self.s[slot].copy())
        self._free(cid)
        return stat

    def insert_stat(self, cid, stat):
        slot = self._create(cid)
        self.n[slot] = stat.n
        self.s[slot] = stat.sum

    def to_plain(self):
        return {"ids": self.ids.tolist(), "n": self.n.tolist(), "s": self.s.tolist()}

    @classmethod
    def from_plain(cls, plain, dim):
        table = cls(dim, capacity=max(1, len(plain["ids"])))
        table.ids = np.asarray(plain["ids"], dtype=np.int64)
        table.n = np.asarray(plain["n"], dtype=np.int64)
        table.s = np.asarray(plain["s"], dtype=float).reshape(len(plain["ids"]), dim)
        table.slot = {int(c): i for i, c in enumerate(table.ids.tolist()) if c >= 0}
        return table


@dataclass
class DpLane:
    """State owned by one lane: its points, their cluster ids and the cluster stats."""

    j: int
    n_procs: int
    idx: np.ndarray
    x: np.ndarray
    z: np.ndarray
    table: ClusterTable
    next_seq: int = 0

    def new_cluster_id(self):
        cid = self.next_seq * self.n_procs + self.j
        self.next_seq += 1
        return cid

    def check(self):
        """Rebuild stats from (z, x) and compare with the incremental table."""
        fresh = ClusterTable(self.x.shape[1])
        for xi, cid in zip(self.x, self.z):
            fresh.add(int(cid), xi)
        if fresh.sizes().keys() != self.table.sizes().keys():
            raise InvariantError(f"lane {self.j}: cluster set differs from member labels")
        for cid, slot in fresh.slot.items():
            mine = self.table.slot[cid]
            if fresh.n[slot] != self.table.n[mine]:
                raise InvariantError(f"lane {self.j}: count mismatch for cluster {cid}")
            if not np.allclose(fresh.s[slot], self.table.s[mine], rtol=0.0, atol=1e-9):
                raise InvariantError(f"lane {self.j}: sum mismatch for cluster {cid}")


@dataclass
class DpState:
    """P lanes plus the model; global (z, pi) are derived from the lanes."""

    model: GaussModel
    alpha: float
    n_procs: int
    n_points: int
    dim: int
    lanes: List[DpLane]

    @classmethod
    def from_assignments(cls, data, z, pi, model, alpha, P):
        """Build lanes from global cluster ids z and processor ids pi.

        Every cluster must sit on a single processor.
        """
        x = np.asarray(getattr(data, "values", data), dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        z = np.asarray(z, dtype=np.int64)
        pi = np.asarray(pi, dtype=np.int64)
        if not alpha > 0 or P < 1:
            raise DomainError(f"need alpha > 0 and P >= 1, got {alpha}, {P}")
        if z.size != x.shape[0] or pi.size != x.shape[0]:
            raise DomainError("z and pi must have one entry per point")
        if pi.size and (pi.min() < 0 or pi.max() >= P):
            raise DomainError(f"processor ids must lie in 0..{P - 1}")
        seq = int(z.max()) // P + 1 if z.size else 0
        lanes = []
        for j in range(P):
            idx = np.flatnonzero(pi == j)
            table = ClusterTable(x.shape[1])
            for i in idx:
                table.add(int(z[i]), x[i])
            lanes.append(DpLane(j, P, idx, x[idx].copy(), z[idx].copy(), table, seq))
        state = cls(model, float(alpha), P, x.shape[0], x.shape[1], lanes)
        state.check_locality()
        return state

    @property
    def n_clusters(self):
        return sum(len(lane.table) for lane in self.lanes)

    def n_per_proc(self):
        return [int(lane.idx.size) for lane in self.lanes]

    def assignments(self):
        """Global (z, pi) arrays in point order."""
        z = np.empty(self.n_points, dtype=np.int64)
        pi = np.empty(self.n_points, dtype=np.int64)
        for lane in self.lanes:
            z[lane.idx] = lane.z
            pi[lane.idx] = lane.j
        return z, pi

    def data(self):
        x = np.empty((self.n_points, self.dim))
        for lane in self.lanes:
            x[lane.idx] = lane.x
        return x

    def histogram(self):
        return size_histogram([list(lane.table.sizes().values()) for lane in self.lanes])

    def check_locality(self):
        """Every cluster lives in exactly one lane."""
        seen = set()
        for lane in self.lanes:
            ids = set(lane.table.slot)
            if seen & ids:
                raise InvariantError(f"clusters {sorted(seen & ids)} span several processors")
            seen |= ids

    def check(self):
        self.check_locality()
        for lane in self.lanes:
            if lane.idx.size and np.any(np.diff(lane.idx) <= 0):
                raise InvariantError(f"lane {lane.j}: owned points out of index order")
            lane.check()

    def to_plain(self):
        return {
            "model": {"mu0": self.model.mu0, "tau2": self.model.tau2, "sigma2": self.model.sigma2},
            "alpha": self.alpha,
            "n_procs": self.n_procs,
            "n_points": self.n_points,
            "lanes": [
                {"idx": lane.idx.tolist(), "z": lane.z.tolist(), "table": lane.table.to_plain(), "next_seq": lane.next_seq}
                for lane in self.lanes
            ],
        }

    @classmethod
    def from_plain(cls, plain, data):
        """Restore a state saved by to_plain; point values come from data."""
        x = np.asarray(getattr(data, "values", data), dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != plain["n_points"]:
            raise DomainError(f"data has {x.shape[0]} points, saved state has {plain['n_points']}")
        P = plain["n_procs"]
        lanes = []
        for j, lp in enumerate(plain["lanes"]):
            idx = np.asarray(lp["idx"], dtype=np.int64)
            table = ClusterTable.from_plain(lp["table"], x.shape[1])
            lanes.append(DpLane(j, P, idx, x[idx].copy(), np.asarray(lp["z"], dtype=np.int64), table, lp["next_seq"]))
        return cls(GaussModel(**plain["model"]), plain["alpha"], P, x.shape[0], x.shape[1], lanes)


def sweep_lane(lane, model, alpha, stream, debug=False):
    """One collapsed Gibbs pass over the lane's points in index order.

    Args:
        lane (DpLane): Lane state, mutated in place
        model (GaussModel): Observation model
        alpha (float): Global concentration; the lane uses alpha / P
        stream (RngStream): The lane's stream
        debug (bool, optional): Re-check stats afterwards. Defaults to False.

    Returns:
        int: Number of points whose cluster changed
    """
    table = lane.table
    log_new = np.log(alpha / lane.n_procs)
    empty_n = np.zeros(1)
    empty_s = np.zeros((1, lane.x.shape[1]))
    moved = 0
    for pos in range(lane.idx.size):
        xi = lane.x[pos]
        old = int(lane.z[pos])
        emptied = table.remove(old, xi)
        live = table.live()
        lw = np.empty(live.size + 1)
        if live.size:
            n = table.n[live]
            lw[:-1] = np.log(n) + model.log_predictive(n, table.s[live], xi)
        lw[-1] = log_new + model.log_predictive(empty_n, empty_s, xi)[0]
        k = sample_categorical_log(stream, lw)
        if k == live.size:
            cid = old if emptied else lane.new_cluster_id()
        else:
            cid = int(table.ids[live[k]])
        table.add(cid, xi)
        lane.z[pos] = cid
        if cid != old:
            moved += 1
    if debug:
        lane.check()
    return moved


def local_sweep(state, j, stream, debug=False):
    """Sweep lane j of a DpState; returns the number of reassignments."""
    return sweep_lane(state.lanes[j], state.model, state.alpha, stream, debug=debug)


def dp_accept_log_ratio(cur, prop):
    """Log of prod_j prod_i a_ij! / a*_ij!, over entries that differ.

    Args:
        cur (SizeHistogram): Current per-processor size histogram
        prop (SizeHistogram): Proposed histogram over the same cluster sizes

    Returns:
        float: Log acceptance ratio
    """
    if cur.n_procs != prop.n_procs or cur.size_multiset() != prop.size_multiset():
        raise DomainError("current and proposed histograms cover different cluster sizes")
    total = 0.0
    for a, b in zip(cur.counts, prop.counts):
        for size in set(a) | set(b):
            ca, cb = a.get(size, 0), b.get(size, 0)
            if ca != cb:
                total += gammaln(ca + 1.0) - gammaln(cb + 1.0)
    return float(total)


@dataclass
class GlobalStepResult:
    accepted: bool
    log_ratio: float
    moved: int


def _migrate(state, moves):
    """Move clusters between lanes. moves: {cluster id: (source lane, target lane)}."""
    P = state.n_procs
    incoming = [[] for _ in range(P)]
    for lane in state.lanes:
        mine = [cid for cid, (src, _) in moves.items() if src == lane.j]
        if not mine:
            continue
        mask = np.isin(lane.z, mine)
        dest = np.array([moves[int(c)][1] for c in lane.z[mask]], dtype=np.int64)
        for dst in np.unique(dest):
            rows = np.flatnonzero(mask)[dest == dst]
            incoming[dst].append((lane.idx[rows], lane.x[rows], lane.z[rows]))
        keep = ~mask
        lane.idx, lane.x, lane.z = lane.idx[keep], lane.x[keep], lane.z[keep]
    for cid, (src, dst) in moves.items():
        state.lanes[dst].table.insert_stat(cid, state.lanes[src].table.pop_stat(cid))
    for lane, parts in zip(state.lanes, incoming):
        if not parts:
            continue
        idx = np.concatenate([lane.idx] + [p[0] for p in parts])
        x = np.concatenate([lane.x] + [p[1] for p in parts])
        z = np.concatenate([lane.z] + [p[2] for p in parts])
        order = np.argsort(idx, kind="stable")
        lane.idx, lane.x, lane.z = idx[order], x[order], z[order]


def dp_global_step(state, stream, ratio_mode="paper", move_subset=0):
    """Metropolis-Hastings reallocation of whole clusters to processors.

    Every cluster (or a uniformly chosen subset of `move_subset` clusters) is
    proposed onto a uniformly random processor and the joint move is accepted
    with probability min(1, exp(dp_accept_log_ratio)). With ratio_mode
    "always_accept" the ratio is computed and reported but the move is always
    taken.

    Args:
        state (DpState): Sampler state, mutated on accept
        stream (RngStream): The global-phase stream
        ratio_mode (str, optional): "paper" or "always_accept". Defaults to "paper".
        move_subset (int, optional): Clusters proposed per step, 0 = all. Defaults to 0.

    Returns:
        GlobalStepResult: Acceptance flag, log ratio and number of clusters moved
    """
    P = state.n_procs
    clusters = [(cid, lane.j, size) for lane in state.lanes for cid, size in lane.table.sizes().items()]
    if P == 1 or not clusters:
        return GlobalStepResult(True, 0.0, 0)

    current = np.array([c[1] for c in clusters], dtype=np.int64)
    proposed = current.copy()
    if 0 < move_subset < len(clusters):
        chosen = sample_subset(stream, len(clusters), move_subset)
    else:
        chosen = np.arange(len(clusters))
    proposed[chosen] = sample_integers(stream, P, size=chosen.size)

    sizes = np.array([c[2] for c in clusters], dtype=np.int64)
    cur = size_histogram([sizes[current == j] for j in range(P)])
    prop = size_histogram([sizes[proposed == j] for j in range(P)])
    log_ratio = dp_accept_log_ratio(cur, prop)
    threshold = 0.0 if ratio_mode == "always_accept" else log_ratio
    accepted = bool(np.log(sample_uniform(stream)) <= threshold)

    moves = {}
    if accepted:
        moves = {
            clusters[k][0]: (int(current[k]), int(proposed[k]))
            for k in range(len(clusters))
            if proposed[k] != current[k]
        }
        if moves:
            _migrate(state, moves)
    state.check_locality()
    logger.debug(f"dp global step: log_ratio={log_ratio:.4f} accepted={accepted} moved={len(moves)}")
    return GlobalStepResult(accepted, log_ratio, len(moves))


def log_joint(state):
    """Polya processor term + per-processor Ewens terms + cluster evidence."""
    P = state.n_procs
    total = polya_log_prob(ProcessorCounts(state.n_per_proc()), state.alpha, P)
    for lane in state.lanes:
        sizes = list(lane.table.sizes().values())
        total += ewens_log_prob(sizes, state.alpha / P)
        if lane.z.size == 0:
            continue
        order = np.argsort(lane.z, kind="stable")
        zs = lane.z[order]
        cuts = np.flatnonzero(np.diff(zs)) + 1
        for block in np.split(lane.x[order], cuts):
            total += state.model.log_marginal(block)
    return float(total)


def sample_crp_partition(stream, n, alpha):
    """Labels of n customers seated by a Chinese restaurant process."""
    labels = np.empty(n, dtype=np.int64)
    counts = []
    for i in range(n):
        lw = np.log(np.append(np.asarray(counts, dtype=float), alpha))
        k = sample_categorical_log(stream, lw)
        if k == len(counts):
            counts.append(0)
        counts[k] += 1
        labels[i] = k
    return labels


def sample_aux_partition(stream, n, alpha, P):
    """Labels from the auxiliary construction.

    phi ~ Dirichlet(alpha/P, ...), pi_i ~ phi, then an independent
    CRP(alpha/P) on each processor. The marginal partition is CRP(alpha).
    """
    if P == 1:
        return sample_crp_partition(stream, n, alpha)
    phi = sample_dirichlet(stream, np.full(P, alpha / P))
    pi = sample_categorical_log(stream, np.log(phi), size=n)
    labels = np.empty(n, dtype=np.int64)
    offset = 0
    for j in range(P):
        members = np.flatnonzero(pi == j)
        local = sample_crp_partition(stream, members.size, alpha / P)
        labels[members] = local + offset
        offset += int(local.max()) + 1 if local.size else 0
    return labels


def cluster_count_distribution(labels_list):
    """Counter of the number of clusters over a list of label vectors."""
    return Counter(int(np.unique(labels).size) for labels in labels_list)
