"""Auxiliary-variable HDP topic model.

Lane j is a Chinese restaurant franchise with bottom concentration
zeta_j = gamma * xi_j and top concentration alpha / P. Dishes (topics) are
the units the global step moves between lanes, each with all of its tables
and their tokens. Table and dish ids are minted as ``seq * P + j`` so they
stay unique without coordination and survive migration unchanged.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from loguru import logger
from scipy.special import gammaln

from modules.rand_core import (
    sample_categorical_log,
    sample_dirichlet,
    sample_integers,
    sample_normal,
    sample_subset,
    sample_uniform,
)
from utils.error_handler import DomainError, InvariantError

SIMPLEX_TOL = 1e-9


@dataclass
class HdpHyper:
    alpha: float
    P: int
    beta: float
    V: int

    def __post_init__(self):
        if not self.alpha > 0 or not self.beta > 0:
            raise DomainError(f"alpha and beta must be > 0, got {self.alpha}, {self.beta}")
        if self.P < 1 or self.V < 2:
            raise DomainError(f"need P >= 1 and V >= 2, got P={self.P}, V={self.V}")

    @property
    def lane_alpha(self):
        return self.alpha / self.P


@dataclass
class GlobalWeights:
    """gamma and the processor weights xi; zeta_j = gamma * xi_j."""

    gamma: float
    xi: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if not self.gamma > 0:
            raise DomainError(f"gamma must be > 0, got {self.gamma}")
        _check_simplex(self.xi)

    @classmethod
    def uniform(cls, gamma, P):
        return cls(float(gamma), np.full(P, 1.0 / P))

    @property
    def zeta(self):
        return self.gamma * self.xi


def _check_simplex(xi):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1 or xi.size < 1 or np.any(~(xi > 0)) or abs(xi.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError(f"xi must be a strictly positive simplex vector, got {xi}")


@dataclass
class Table:
    doc: int
    dish: int
    n: int = 0


class DishTable:
    """Slot table of live dishes: topic-word counts, token totals and table counts t_jd."""

    def __init__(self, V, capacity=8):
        self.V = V
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.wc = np.zeros((capacity, V), dtype=np.int64)
        self.tot = np.zeros(capacity, dtype=np.int64)
        self.t = np.zeros(capacity, dtype=np.int64)
        self.slot = {}

    def __len__(self):
        return len(self.slot)

    def __contains__(self, did):
        return did in self.slot

    def create(self, did):
        free = np.flatnonzero(self.ids < 0)
        if free.size == 0:
            cap = self.ids.size
            self.ids = np.concatenate([self.ids, np.full(cap, -1, dtype=np.int64)])
            self.wc = np.vstack([self.wc, np.zeros_like(self.wc)])
            self.tot = np.concatenate([self.tot, np.zeros(cap, dtype=np.int64)])
            self.t = np.concatenate([self.t, np.zeros(cap, dtype=np.int64)])
            free = np.array([cap])
        slot = int(free[0])
        self.ids[slot] = did
        self.slot[did] = slot
        return slot

    def free(self, did):
        slot = self.slot.pop(did)
        self.ids[slot] = -1
        self.wc[slot] = 0
        self.tot[slot] = 0
        self.t[slot] = 0

    def live(self):
        return np.flatnonzero(self.ids >= 0)

    def pop(self, did):
        slot = self.slot[did]
        row = (self.wc[slot].copy(), int(self.tot[slot]), int(self.t[slot]))
        self.free(did)
        return row

    def insert(self, did, row):
        slot = self.create(did)
        self.wc[slot], self.tot[slot], self.t[slot] = row
        return slot

    def to_plain(self):
        rows = []
        for slot in self.live().tolist():
            nz = np.flatnonzero(self.wc[slot])
            rows.append([slot, int(self.ids[slot]), int(self.t[slot]), nz.tolist(), self.wc[slot, nz].tolist()])
        return {"capacity": int(self.ids.size), "rows": rows}

    @classmethod
    def from_plain(cls, plain, V):
        table = cls(V, capacity=max(1, plain["capacity"]))
        for slot, did, t, words, counts in plain["rows"]:
            table.ids[slot] = did
            table.t[slot] = t
            table.wc[slot, words] = counts
            table.tot[slot] = sum(counts)
            table.slot[did] = slot
        return table


@dataclass
class CrfLane:
    """One processor's franchise: its tokens, tables and dishes."""

    j: int
    n_procs: int
    V: int
    tok: np.ndarray
    doc: np.ndarray
    word: np.ndarray
    table: np.ndarray
    tables: Dict[int, Table] = field(default_factory=dict)
    doc_tables: Dict[int, List[int]] = field(default_factory=dict)
    dishes: DishTable = None
    next_table_seq: int = 0
    next_dish_seq: int = 0

    def __post_init__(self):
        if self.dishes is None:
            self.dishes = DishTable(self.V)

    def new_table_id(self):
        tid = self.next_table_seq * self.n_procs + self.j
        self.next_table_seq += 1
        return tid

    def new_dish_id(self):
        did = self.next_dish_seq * self.n_procs + self.j
        self.next_dish_seq += 1
        return did

    def open_table(self, doc, did):
        tid = self.new_table_id()
        self.tables[tid] = Table(doc, did, 0)
        self.doc_tables.setdefault(doc, []).append(tid)
        self.dishes.t[self.dishes.slot[did]] += 1
        return tid

    def close_table(self, tid):
        """Delete an empty table; deletes its dish too when no tables remain."""
        tb = self.tables.pop(tid)
        tids = self.doc_tables[tb.doc]
        tids.remove(tid)
        if not tids:
            del self.doc_tables[tb.doc]
        slot = self.dishes.slot[tb.dish]
        self.dishes.t[slot] -= 1
        if self.dishes.t[slot] == 0:
            self.dishes.free(tb.dish)

    def check(self):
        """Rebuild every count from token records and compare with the incremental state."""
        rebuilt = Counter(self.table.tolist())
        if set(rebuilt) != set(self.tables):
            raise InvariantError(f"lane {self.j}: tables do not match token records")
        wc = {did: np.zeros(self.V, dtype=np.int64) for did in self.dishes.slot}
        t_count = Counter()
        for tid, tb in self.tables.items():
            if rebuilt[tid] != tb.n:
                raise InvariantError(f"lane {self.j}: table {tid} holds {tb.n}, tokens say {rebuilt[tid]}")
            if tb.dish not in self.dishes:
                raise InvariantError(f"lane {self.j}: table {tid} serves dish {tb.dish} from another lane")
            if tid not in self.doc_tables.get(tb.doc, ()):
                raise InvariantError(f"lane {self.j}: table {tid} missing from document {tb.doc}")
            t_count[tb.dish] += 1
        for pos in range(self.tok.size):
            tb = self.tables[int(self.table[pos])]
            if tb.doc != self.doc[pos]:
                raise InvariantError(f"lane {self.j}: token {self.tok[pos]} sits in another document's table")
            wc[tb.dish][self.word[pos]] += 1
        if sum(len(v) for v in self.doc_tables.values()) != len(self.tables):
            raise InvariantError(f"lane {self.j}: document table lists out of sync")
        for did, slot in self.dishes.slot.items():
            if self.dishes.t[slot] != t_count[did]:
                raise InvariantError(f"lane {self.j}: dish {did} table count mismatch")
            if not np.array_equal(self.dishes.wc[slot], wc[did]) or self.dishes.tot[slot] != wc[did].sum():
                raise InvariantError(f"lane {self.j}: dish {did} word counts mismatch")
        if self.tok.size and np.any(np.diff(self.tok) <= 0):
            raise InvariantError(f"lane {self.j}: owned tokens out of index order")

    def to_plain(self):
        return {
            "j": self.j,
            "tok": self.tok.tolist(),
            "table": self.table.tolist(),
            "tables": [[tid, tb.doc, tb.dish, tb.n] for tid, tb in self.tables.items()],
            "doc_tables": [[m, tids] for m, tids in self.doc_tables.items()],
            "dishes": self.dishes.to_plain(),
            "next_table_seq": self.next_table_seq,
            "next_dish_seq": self.next_dish_seq,
        }


@dataclass
class CrfState:
    hyper: HdpHyper
    n_docs: int
    n_tokens: int
    lanes: List[CrfLane]

    @classmethod
    def from_seating(cls, corpus, table_of_token, dish_of_table, proc_of_dish, hyper):
        """Build lanes from a global seating.

        Args:
            corpus (Corpus): Training documents
            table_of_token (array-like): Table id of every token, in corpus token order
            dish_of_table (dict): Dish id of every table
            proc_of_dish (dict): Processor of every dish
            hyper (HdpHyper): Model hyperparameters

        Returns:
            CrfState: Consistent state
        """
        docs, words = corpus.token_arrays()
        table_of_token = np.asarray(table_of_token, dtype=np.int64)
        if table_of_token.size != docs.size:
            raise DomainError("need one table id per token")
        if corpus.V > hyper.V:
            raise DomainError(f"corpus vocabulary {corpus.V} exceeds model vocabulary {hyper.V}")
        P = hyper.P
        table_doc = {}
        for tid, m in zip(table_of_token.tolist(), docs.tolist()):
            if table_doc.setdefault(tid, m) != m:
                raise DomainError(f"table {tid} seats tokens from several documents")
        max_table = max(table_doc, default=-1)
        max_dish = max(dish_of_table.values(), default=-1)
        proc_of_token = np.array([proc_of_dish[dish_of_table[t]] for t in table_of_token.tolist()], dtype=np.int64)
        lanes = []
        for j in range(P):
            own = np.flatnonzero(proc_of_token == j)
            lane = CrfLane(
                j, P, hyper.V, own, docs[own], words[own], table_of_token[own].copy(),
                next_table_seq=max_table // P + 1, next_dish_seq=max_dish // P + 1,
            )
            for tid in sorted(set(lane.table.tolist())):
                did = int(dish_of_table[tid])
                if did not in lane.dishes:
                    lane.dishes.create(did)
                lane.tables[tid] = Table(table_doc[tid], did, 0)
                lane.doc_tables.setdefault(table_doc[tid], []).append(tid)
                lane.dishes.t[lane.dishes.slot[did]] += 1
            for pos in range(own.size):
                tb = lane.tables[int(lane.table[pos])]
                tb.n += 1
                slot = lane.dishes.slot[tb.dish]
                lane.dishes.wc[slot, lane.word[pos]] += 1
                lane.dishes.tot[slot] += 1
            lanes.append(lane)
        state = cls(hyper, corpus.M, int(docs.size), lanes)
        state.check_locality()
        return state

    @property
    def n_topics(self):
        return sum(len(lane.dishes) for lane in self.lanes)

    @property
    def t_total(self):
        return sum(len(lane.tables) for lane in self.lanes)

    def n_per_proc(self):
        return [int(lane.tok.size) for lane in self.lanes]

    def assignments(self):
        """(processor, dish) of every token in corpus order."""
        pi = np.empty(self.n_tokens, dtype=np.int64)
        dish = np.empty(self.n_tokens, dtype=np.int64)
        for lane in self.lanes:
            pi[lane.tok] = lane.j
            dish[lane.tok] = [lane.tables[int(t)].dish for t in lane.table]
        return pi, dish

    def global_topics(self):
        """Topic-word counts (D, V), token totals (D,) and table counts (D,) over all lanes."""
        counts, totals, tables = [], [], []
        for lane in self.lanes:
            live = lane.dishes.live()
            counts.append(lane.dishes.wc[live])
            totals.append(lane.dishes.tot[live])
            tables.append(lane.dishes.t[live])
        if not counts:
            return np.zeros((0, self.hyper.V), dtype=np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
        return np.vstack(counts), np.concatenate(totals), np.concatenate(tables)

    def check_locality(self):
        dishes, tables = set(), set()
        for lane in self.lanes:
            mine = set(lane.dishes.slot)
            if dishes & mine:
                raise InvariantError(f"dishes {sorted(dishes & mine)} live on several processors")
            if tables & set(lane.tables):
                raise InvariantError("a table id is used on several processors")
            dishes |= mine
            tables |= set(lane.tables)

    def check(self):
        self.check_locality()
        for lane in self.lanes:
            lane.check()

    def to_plain(self):
        return {
            "hyper": {"alpha": self.hyper.alpha, "P": self.hyper.P, "beta": self.hyper.beta, "V": self.hyper.V},
            "n_docs": self.n_docs,
            "n_tokens": self.n_tokens,
            "lanes": [lane.to_plain() for lane in self.lanes],
        }

    @classmethod
    def from_plain(cls, plain, corpus):
        """Restore a state saved by to_plain; doc and word ids come from the corpus."""
        hyper = HdpHyper(**plain["hyper"])
        docs, words = corpus.token_arrays()
        if docs.size != plain["n_tokens"] or corpus.M != plain["n_docs"]:
            raise DomainError("corpus does not match the saved state")
        lanes = []
        for lp in plain["lanes"]:
            tok = np.asarray(lp["tok"], dtype=np.int64)
            lane = CrfLane(
                lp["j"], hyper.P, hyper.V, tok, docs[tok], words[tok],
                np.asarray(lp["table"], dtype=np.int64),
                tables={tid: Table(m, d, n) for tid, m, d, n in lp["tables"]},
                doc_tables={m: list(tids) for m, tids in lp["doc_tables"]},
                dishes=DishTable.from_plain(lp["dishes"], hyper.V),
                next_table_seq=lp["next_table_seq"],
                next_dish_seq=lp["next_dish_seq"],
            )
            lanes.append(lane)
        return cls(hyper, plain["n_docs"], plain["n_tokens"], lanes)


@dataclass
class HdpRatioStats:
    """Per processor j: T_.j, the b_ji histogram, per-document a_jmi histograms and n_jm."""

    t_total: np.ndarray
    b: List[Counter]
    a: List[List[Counter]]
    n: np.ndarray

    @property
    def n_procs(self):
        return len(self.b)

    @property
    def n_docs(self):
        return self.n.shape[1]


def _table_rows(state):
    """(processor, doc, dish, customers) for every table."""
    return [(lane.j, tb.doc, tb.dish, tb.n) for lane in state.lanes for tb in lane.tables.values()]


def _stats_from_rows(rows, P, M):
    t_total = np.zeros(P, dtype=np.int64)
    a = [[Counter() for _ in range(M)] for _ in range(P)]
    n = np.zeros((P, M), dtype=np.int64)
    dish_tables = Counter()
    for j, m, d, size in rows:
        t_total[j] += 1
        a[j][m][size] += 1
        n[j, m] += size
        dish_tables[(j, d)] += 1
    b = [Counter() for _ in range(P)]
    for (j, _), count in dish_tables.items():
        b[j][count] += 1
    return HdpRatioStats(t_total, b, a, n)


def ratio_stats(state):
    return _stats_from_rows(_table_rows(state), state.hyper.P, state.n_docs)


def topic_predictive_log(counts, word, hyper, total=None):
    """log((count_w + beta) / (total + V * beta)) under the symmetric Dirichlet base."""
    if not 0 <= word < hyper.V:
        raise DomainError(f"word id {word} outside vocabulary of size {hyper.V}")
    counts = np.asarray(counts)
    total = counts.sum() if total is None else total
    return float(np.log((counts[word] + hyper.beta) / (total + hyper.V * hyper.beta)))


def _log_fact_delta(cur, prop):
    """sum over sizes of log(cur_i!) - log(prop_i!), only where they differ."""
    total = 0.0
    for size in set(cur) | set(prop):
        x, y = cur.get(size, 0), prop.get(size, 0)
        if x != y:
            total += gammaln(x + 1.0) - gammaln(y + 1.0)
    return total


def hdp_accept_log_r(cur, prop, xi_cur, xi_prop, hyper):
    """Log acceptance ratio of a joint (dish -> processor, xi) proposal.

    Args:
        cur (HdpRatioStats): Statistics of the current state
        prop (HdpRatioStats): Statistics of the proposed state
        xi_cur (array-like): Current processor weights
        xi_prop (array-like): Proposed processor weights
        hyper (HdpHyper): Model hyperparameters

    Returns:
        float: log r
    """
    _check_simplex(xi_cur)
    _check_simplex(xi_prop)
    xi_cur = np.asarray(xi_cur, dtype=float)
    xi_prop = np.asarray(xi_prop, dtype=float)
    if cur.n_procs != prop.n_procs or xi_cur.size != cur.n_procs or xi_prop.size != cur.n_procs:
        raise DomainError("statistics and xi must cover the same processors")
    a = hyper.alpha / cur.n_procs
    log_r = 0.0
    for j in range(cur.n_procs):
        T, Ts = float(cur.t_total[j]), float(prop.t_total[j])
        log_r += (Ts + a) * np.log(xi_prop[j]) - (T + a) * np.log(xi_cur[j])
        if T != Ts:
            log_r += gammaln(Ts + 1.0) - gammaln(T + 1.0) + gammaln(a + T) - gammaln(a + Ts)
        log_r += _log_fact_delta(cur.b[j], prop.b[j])
        for hist, hist_s in zip(cur.a[j], prop.a[j]):
            log_r += _log_fact_delta(hist, hist_s)
    return float(log_r)


def crf_log_joint(state, weights):
    """Seating, processor-assignment and xi-prior terms of the joint.

    Sums log p({n_jmk} | gamma, xi) + log p({t_jd} | alpha, P)
    + log p({pi_mi} | gamma, xi) + (alpha/P) sum_j log xi_j, with the
    per-size multiplicity corrections taken as log factorials. Differences
    of this value across a dish move reproduce hdp_accept_log_r.
    """
    hyper = state.hyper
    P, M = hyper.P, state.n_docs
    a = hyper.lane_alpha
    zeta = weights.zeta
    rows = _table_rows(state)
    stats = _stats_from_rows(rows, P, M)
    sizes = np.array([r[3] for r in rows], dtype=float)
    tables_per = np.zeros((P, M))
    for j, m, _, _ in rows:
        tables_per[j, m] += 1

    # Bottom-level seating
    n = stats.n.astype(float)
    total = (tables_per * np.log(zeta)[:, None]).sum()
    total += gammaln(n + 1.0).sum() - gammaln(sizes + 1.0).sum()
    total += (gammaln(zeta)[:, None] - gammaln(zeta[:, None] + n)).sum()
    total -= sum(gammaln(np.array(list(h.values()), dtype=float) + 1.0).sum() for hists in stats.a for h in hists)

    # Top-level dish allocation
    for j, lane in enumerate(state.lanes):
        t_jd = lane.dishes.t[lane.dishes.live()].astype(float)
        T = float(stats.t_total[j])
        total += t_jd.size * np.log(a) + gammaln(T + 1.0) - gammaln(t_jd + 1.0).sum()
        total += gammaln(a) - gammaln(a + T)
        total -= gammaln(np.array(list(stats.b[j].values()), dtype=float) + 1.0).sum()

    # Processor assignments
    n_doc = n.sum(axis=0)
    total += (gammaln(n_doc + 1.0) - gammaln(n + 1.0).sum(axis=0)).sum()
    total += (gammaln(weights.gamma) - gammaln(n_doc + weights.gamma)).sum()
    total += (gammaln(zeta[:, None] + n) - gammaln(zeta)[:, None]).sum()

    total += a * np.log(weights.xi).sum()
    return float(total)


def _unseat(lane, pos):
    tid = int(lane.table[pos])
    tb = lane.tables[tid]
    tb.n -= 1
    slot = lane.dishes.slot[tb.dish]
    lane.dishes.wc[slot, lane.word[pos]] -= 1
    lane.dishes.tot[slot] -= 1
    if tb.n == 0:
        lane.close_table(tid)
    return tid


def _seat(lane, pos, tid):
    tb = lane.tables[tid]
    tb.n += 1
    slot = lane.dishes.slot[tb.dish]
    lane.dishes.wc[slot, lane.word[pos]] += 1
    lane.dishes.tot[slot] += 1
    lane.table[pos] = tid


def sweep_crf_lane(lane, hyper, zeta, stream, debug=False):
    """Resample every owned token's table, then every table's dish.

    Args:
        lane (CrfLane): Lane state, mutated in place
        hyper (HdpHyper): Model hyperparameters
        zeta (float): Bottom-level concentration gamma * xi_j of this lane
        stream (RngStream): The lane's stream
        debug (bool, optional): Re-check counts afterwards. Defaults to False.

    Returns:
        int: Number of tokens that changed table
    """
    if lane.tok.size == 0:
        return 0
    beta, V = hyper.beta, hyper.V
    vb = V * beta
    a = hyper.alpha / lane.n_procs
    log_zeta, log_a, log_fnew = np.log(zeta), np.log(a), -np.log(V)
    dishes = lane.dishes
    moved = 0

    for pos in range(lane.tok.size):
        w = int(lane.word[pos])
        m = int(lane.doc[pos])
        old = _unseat(lane, pos)
        live = dishes.live()
        f = (dishes.wc[live, w] + beta) / (dishes.tot[live] + vb)
        t = dishes.t[live]
        mix = (t @ f + a / V) / (t.sum() + a)
        tids = lane.doc_tables.get(m, [])
        lw = np.empty(len(tids) + 1)
        if tids:
            tabs = [lane.tables[x] for x in tids]
            slots = [dishes.slot[tb.dish] for tb in tabs]
            n_k = np.array([tb.n for tb in tabs], dtype=float)
            lw[:-1] = np.log(n_k) + np.log((dishes.wc[slots, w] + beta) / (dishes.tot[slots] + vb))
        lw[-1] = log_zeta + np.log(mix)
        k = sample_categorical_log(stream, lw)
        if k < len(tids):
            tid = tids[k]
        else:
            dw = np.append(np.log(t) + np.log(f), log_a + log_fnew)
            d = sample_categorical_log(stream, dw)
            if d < live.size:
                did = int(dishes.ids[live[d]])
            else:
                did = lane.new_dish_id()
                dishes.create(did)
            tid = lane.open_table(m, did)
        _seat(lane, pos, tid)
        if tid != old:
            moved += 1

    _resample_dishes(lane, hyper, stream)
    if debug:
        lane.check()
    return moved


def _resample_dishes(lane, hyper, stream):
    beta, V = hyper.beta, hyper.V
    vb = V * beta
    log_a = np.log(hyper.alpha / lane.n_procs)
    dishes = lane.dishes
    order = np.argsort(lane.table, kind="stable")
    sorted_tables = lane.table[order]
    cuts = np.flatnonzero(np.diff(sorted_tables)) + 1
    groups = {
        int(block_tables[0]): lane.word[block]
        for block, block_tables in zip(np.split(order, cuts), np.split(sorted_tables, cuts))
    }

    for tid in list(lane.tables):
        tb = lane.tables[tid]
        u, c = np.unique(groups[tid], return_counts=True)
        old = tb.dish
        slot = dishes.slot[old]
        dishes.wc[slot, u] -= c
        dishes.tot[slot] -= tb.n
        dishes.t[slot] -= 1
        emptied = dishes.t[slot] == 0
        if emptied:
            dishes.free(old)
        live = dishes.live()
        base = dishes.wc[np.ix_(live, u)] + beta
        tot = dishes.tot[live] + vb
        lf = (gammaln(base + c) - gammaln(base)).sum(axis=1) - (gammaln(tot + tb.n) - gammaln(tot))
        lf_new = (gammaln(beta + c) - gammaln(beta)).sum() - (gammaln(vb + tb.n) - gammaln(vb))
        lw = np.append(np.log(dishes.t[live]) + lf, log_a + lf_new)
        d = sample_categorical_log(stream, lw)
        if d < live.size:
            did = int(dishes.ids[live[d]])
            slot = live[d]
        else:
            did = old if emptied else lane.new_dish_id()
            slot = dishes.create(did)
        dishes.wc[slot, u] += c
        dishes.tot[slot] += tb.n
        dishes.t[slot] += 1
        tb.dish = did


def crf_local_sweep(state, weights, j, stream, debug=False):
    """Sweep lane j of a CrfState with its bottom concentration gamma * xi_j."""
    return sweep_crf_lane(state.lanes[j], state.hyper, float(weights.zeta[j]), stream, debug=debug)


def _migrate_dishes(state, moves):
    """Move dishes with their tables and tokens. moves: {dish id: (source, target)}."""
    incoming = [[] for _ in state.lanes]
    for lane in state.lanes:
        mine = {did: dst for did, (src, dst) in moves.items() if src == lane.j}
        if not mine:
            continue
        dest_of_table = {}
        for tid in [tid for tid, tb in lane.tables.items() if tb.dish in mine]:
            tb = lane.tables.pop(tid)
            tids = lane.doc_tables[tb.doc]
            tids.remove(tid)
            if not tids:
                del lane.doc_tables[tb.doc]
            dst = state.lanes[mine[tb.dish]]
            dst.tables[tid] = tb
            dst.doc_tables.setdefault(tb.doc, []).append(tid)
            dest_of_table[tid] = dst.j
        mask = np.isin(lane.table, list(dest_of_table))
        dest = np.array([dest_of_table[int(t)] for t in lane.table[mask]], dtype=np.int64)
        rows = np.flatnonzero(mask)
        for dst in np.unique(dest):
            pick = rows[dest == dst]
            incoming[dst].append((lane.tok[pick], lane.doc[pick], lane.word[pick], lane.table[pick]))
        keep = ~mask
        lane.tok, lane.doc, lane.word, lane.table = lane.tok[keep], lane.doc[keep], lane.word[keep], lane.table[keep]
    for did, (src, dst) in moves.items():
        state.lanes[dst].dishes.insert(did, state.lanes[src].dishes.pop(did))
    for lane, parts in zip(state.lanes, incoming):
        if not parts:
            continue
        cols = [
            np.concatenate([getattr(lane, name)] + [p[i] for p in parts])
            for i, name in enumerate(("tok", "doc", "word", "table"))
        ]
        order = np.argsort(cols[0], kind="stable")
        lane.tok, lane.doc, lane.word, lane.table = (c[order] for c in cols)


@dataclass
class HdpStepResult:
    accepted: bool
    log_r: float
    moved: int


def hdp_global_step(state, weights, stream, move_subset=0):
    """Jointly propose a processor for every dish and fresh xi* ~ Dirichlet(alpha/P).

    Args:
        state (CrfState): Sampler state, mutated on accept
        weights (GlobalWeights): Current gamma and xi
        stream (RngStream): The global-phase stream
        move_subset (int, optional): Dishes proposed per step, 0 = all. Defaults to 0.

    Returns:
        tuple: (GlobalWeights, HdpStepResult)
    """
    hyper = state.hyper
    P = hyper.P
    if P == 1:
        return weights, HdpStepResult(True, 0.0, 0)

    dishes = [(int(lane.dishes.ids[s]), lane.j) for lane in state.lanes for s in lane.dishes.live()]
    current = np.array([d[1] for d in dishes], dtype=np.int64)
    proposed = current.copy()
    if dishes:
        if 0 < move_subset < len(dishes):
            chosen = sample_subset(stream, len(dishes), move_subset)
        else:
            chosen = np.arange(len(dishes))
        proposed[chosen] = sample_integers(stream, P, size=chosen.size)
    xi_star = sample_dirichlet(stream, np.full(P, hyper.lane_alpha))
    u = sample_uniform(stream)
    if np.any(xi_star <= 0.0):
        logger.warning("xi proposal underflowed to zero; rejecting")
        return weights, HdpStepResult(False, -np.inf, 0)

    target = {did: int(p) for (did, _), p in zip(dishes, proposed)}
    rows = _table_rows(state)
    cur = _stats_from_rows(rows, P, state.n_docs)
    prop = _stats_from_rows([(target[d], m, d, n) for _, m, d, n in rows], P, state.n_docs)
    log_r = hdp_accept_log_r(cur, prop, weights.xi, xi_star, hyper)
    accepted = bool(np.log(u) <= log_r)

    moves = {}
    if accepted:
        moves = {did: (src, int(dst)) for (did, src), dst in zip(dishes, proposed) if dst != src}
        if moves:
            _migrate_dishes(state, moves)
        weights = GlobalWeights(weights.gamma, xi_star)
    state.check_locality()
    logger.debug(f"hdp global step: log_r={log_r:.4f} accepted={accepted} moved={len(moves)}")
    return weights, HdpStepResult(accepted, log_r, len(moves))


def gamma_log_ratio(gamma, gamma_star, t_total, doc_totals):
    """Log of (g*/g)^T [G(g*)/G(g)]^M prod_m G(n_m + g)/G(n_m + g*)."""
    doc_totals = np.asarray(doc_totals, dtype=float)
    M = doc_totals.size
    return float(
        t_total * (np.log(gamma_star) - np.log(gamma))
        + M * (gammaln(gamma_star) - gammaln(gamma))
        + (gammaln(doc_totals + gamma) - gammaln(doc_totals + gamma_star)).sum()
    )


def gamma_mh_step(weights, stats, M, stream, step):
    """Reflected Gaussian random-walk Metropolis-Hastings update of gamma.

    Args:
        weights (GlobalWeights): Current gamma and xi
        stats (HdpRatioStats): Table and token counts of the current state
        M (int): Number of documents
        stream (RngStream): The global-phase stream
        step (float): Random-walk standard deviation, > 0

    Returns:
        tuple: (GlobalWeights, accepted flag)
    """
    if not step > 0:
        raise DomainError(f"gamma step must be > 0, got {step}")
    gamma_star = abs(weights.gamma + float(sample_normal(stream, step)))
    u = sample_uniform(stream)
    if gamma_star == 0.0:
        return weights, False
    doc_totals = stats.n.sum(axis=0)
    if doc_totals.size != M:
        raise DomainError(f"statistics cover {doc_totals.size} documents, expected {M}")
    log_r = gamma_log_ratio(weights.gamma, gamma_star, int(stats.t_total.sum()), doc_totals)
    if np.log(u) <= log_r:
        return GlobalWeights(gamma_star, weights.xi), True
    return weights, False
