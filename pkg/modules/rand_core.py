"""Deterministic per-lane random streams and the distribution primitives the samplers use.

Every stream is a counter-based Philox generator keyed by
``SeedSequence(master_seed, spawn_key=(domain, lane_index))``. Keys never
overlap, so a lane's draws depend only on the seed and the lane number,
not on how lanes are scheduled.
"""

import numpy as np
from scipy.special import gammaln, logsumexp

from utils.error_handler import DomainError

# Stream domains
LANE = 0
GLOBAL = 1
INIT = 2
EVAL = 3

_SEED_MASK = (1 << 64) - 1


class RngStream:
    """One independent random stream.

    Args:
        master_seed (int): Run seed (reduced to 64 bits)
        lane_index (int): Lane number, >= 0
        domain (int, optional): LANE, GLOBAL, INIT or EVAL. Defaults to LANE.
    """

    def __init__(self, master_seed, lane_index, domain=LANE):
        self.master_seed = int(master_seed) & _SEED_MASK
        self.lane_index = int(lane_index)
        self.domain = int(domain)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.domain, self.lane_index))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def get_state(self):
        """Counter state as JSON-safe nested dicts and integer lists."""
        return _to_plain(self.generator.bit_generator.state)

    def set_state(self, state):
        """Restore a state produced by get_state."""
        self.generator.bit_generator.state = _from_plain(state)

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, lane={self.lane_index}, domain={self.domain})"


def _to_plain(value):
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [int(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    return value


def _from_plain(value):
    if isinstance(value, dict):
        return {k: _from_plain(v) for k, v in value.items()}
    if isinstance(value, list):
        return np.array(value, dtype=np.uint64)
    return value


def make_stream(master_seed, lane_index, domain=LANE):
    """Create the stream for (master_seed, lane_index) in the given domain.

    Args:
        master_seed (int): Run seed
        lane_index (int): Lane number, >= 0
        domain (int, optional): Stream domain. Defaults to LANE.

    Returns:
        RngStream: Fresh stream
    """
    if int(lane_index) < 0:
        raise DomainError(f"lane_index must be >= 0, got {lane_index}")
    return RngStream(master_seed, lane_index, domain)


def sample_uniform(stream, size=None):
    """Uniform draws on (0, 1]."""
    return 1.0 - stream.generator.random(size)


def sample_normal(stream, scale=1.0, size=None):
    return stream.generator.normal(0.0, scale, size)


def sample_integers(stream, high, size=None):
    """Uniform integers in [0, high)."""
    return stream.generator.integers(0, high, size=size)


def sample_multinomial(stream, n, pvals):
    return stream.generator.multinomial(n, pvals)


def sample_subset(stream, n, k):
    """k distinct indices from range(n), sorted."""
    return np.sort(stream.generator.choice(n, size=k, replace=False))


def sample_log_gamma(stream, shape, size=None):
    """Log of a Gamma(shape, 1) draw.

    Shapes below one are boosted: if G ~ Gamma(a + 1) and U ~ Uniform(0, 1]
    then G * U**(1/a) ~ Gamma(a). Working in logs keeps tiny draws from
    rounding to zero.
    """
    a = np.asarray(shape, dtype=float)
    if np.any(~(a > 0)):
        raise DomainError(f"gamma shape must be > 0, got {shape}")
    boost = a < 1.0
    if not np.any(boost):
        return np.log(stream.generator.standard_gamma(a, size))
    g = stream.generator.standard_gamma(np.where(boost, a + 1.0, a), size)
    u = sample_uniform(stream, np.shape(g))
    out = np.where(boost, np.log(g) + np.log(u) / a, np.log(g))
    return float(out) if np.ndim(out) == 0 else out


def sample_gamma(stream, shape, size=None):
    """Gamma(shape, 1) draw(s); strictly positive for the shapes used here.

    Args:
        stream (RngStream): Source stream
        shape (float): Shape > 0
        size (int, optional): Number of draws. Defaults to None (scalar).

    Returns:
        float or numpy.ndarray: Draw(s)
    """
    if not shape > 0:
        raise DomainError(f"gamma shape must be > 0, got {shape}")
    if shape >= 1.0:
        return stream.generator.standard_gamma(shape, size)
    return np.exp(sample_log_gamma(stream, shape, size))


def sample_dirichlet(stream, concentration, size=None):
    """Dirichlet draw via normalized log-gamma variates.

    Args:
        stream (RngStream): Source stream
        concentration (array-like): Positive entries, length >= 2
        size (int, optional): Number of draws. Defaults to None (one vector).

    Returns:
        numpy.ndarray: Simplex vector, or (size, K) array of them
    """
    conc = np.asarray(concentration, dtype=float)
    if conc.ndim != 1 or conc.size < 2:
        raise DomainError("dirichlet concentration needs at least 2 entries")
    if np.any(~(conc > 0)):
        raise DomainError(f"dirichlet concentration entries must be > 0, got {concentration}")
    shape = conc.shape if size is None else (size, conc.size)
    logs = sample_log_gamma(stream, np.broadcast_to(conc, shape), shape)
    weights = np.exp(logs - logsumexp(logs, axis=-1, keepdims=True))
    return weights / weights.sum(axis=-1, keepdims=True)


def sample_categorical_log(stream, log_weights, size=None):
    """Sample an index with probability proportional to exp(log_weights).

    Args:
        stream (RngStream): Source stream
        log_weights (array-like): Unnormalized log weights, at least one finite
        size (int, optional): Number of draws. Defaults to None (one index).

    Returns:
        int or numpy.ndarray: Sampled index or indices
    """
    lw = np.asarray(log_weights, dtype=float)
    if np.isnan(lw).any():
        raise DomainError("log weights contain NaN")
    top = lw.max() if lw.size else -np.inf
    if not np.isfinite(top):
        raise DomainError("categorical needs at least one finite log weight")
    cdf = np.cumsum(np.exp(lw - top))
    u = stream.generator.random(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    if size is None:
        return int(idx)
    return idx


def log_gamma_fn(x):
    """Natural log of the gamma function for x > 0."""
    if not x > 0:
        raise DomainError(f"log_gamma_fn needs x > 0, got {x}")
    return float(gammaln(x))


def log_factorial(n):
    """log(n!) for non-negative integers (scalar or array)."""
    return gammaln(np.asarray(n, dtype=float) + 1.0)
