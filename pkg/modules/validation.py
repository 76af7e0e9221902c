"""Side-by-side checks of sampler variants against exact references on tiny problems."""

import numpy as np
from loguru import logger

from modules.dpmm_sampler import DpState, dp_global_step, sweep_lane
from modules.hdp_sampler import GlobalWeights, crf_log_joint, gamma_log_ratio, ratio_stats
from modules.partition import exact_posterior_coclustering
from modules.rand_core import GLOBAL, LANE, make_stream
from utils.config import RATIO_MODES
from utils.error_handler import DomainError


def empirical_coclustering(data, alpha, model, P, sweeps, burn, seed, ratio_mode="paper", global_every=1):
    """Co-clustering frequencies of a serial auxiliary-variable DPMM chain.

    The chain starts with every point in its own cluster, points dealt to
    processors round-robin.

    Returns:
        numpy.ndarray: N x N matrix of the fraction of kept sweeps with z_i == z_k
    """
    x = np.asarray(getattr(data, "values", data), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if not 0 <= burn < sweeps:
        raise DomainError(f"need 0 <= burn < sweeps, got burn={burn}, sweeps={sweeps}")
    z0 = np.arange(n)
    state = DpState.from_assignments(x, z0, z0 % P, model, alpha, P)
    lane_streams = [make_stream(seed, j, LANE) for j in range(P)]
    global_stream = make_stream(seed, 0, GLOBAL)
    together = np.zeros((n, n))
    for sweep in range(sweeps):
        for lane, stream in zip(state.lanes, lane_streams):
            sweep_lane(lane, model, alpha, stream)
        if (sweep + 1) % global_every == 0:
            dp_global_step(state, global_stream, ratio_mode=ratio_mode)
        if sweep >= burn:
            z, _ = state.assignments()
            together += z[:, None] == z[None, :]
    return together / (sweeps - burn)


def coclustering_report(data, alpha, model, P, sweeps, burn, seed, ratio_modes=RATIO_MODES):
    """Run the DPMM chain under each ratio mode next to the exact posterior.

    Args:
        data (PointSet or array-like): At most 10 observations
        alpha (float): DP concentration
        model (GaussModel): Observation model
        P (int): Number of processors
        sweeps (int): Sweeps per chain
        burn (int): Sweeps discarded at the start
        seed (int): Chain seed, shared by every mode
        ratio_modes (tuple, optional): Modes to compare. Defaults to all.

    Returns:
        dict: {"exact": matrix, "modes": {mode: {"matrix": m, "max_dev": float}}}
    """
    exact = exact_posterior_coclustering(data, alpha, model)
    report = {"exact": exact, "modes": {}}
    for mode in ratio_modes:
        matrix = empirical_coclustering(data, alpha, model, P, sweeps, burn, seed, ratio_mode=mode)
        dev = float(np.abs(matrix - exact).max())
        report["modes"][mode] = {"matrix": matrix, "max_dev": dev}
        logger.info(f"ratio_mode={mode} P={P}: max co-clustering deviation {dev:.4f}")
    return report


def gamma_acceptance_comparison(state, weights, gamma_stars):
    """Reduced gamma acceptance next to the full-joint gamma conditional.

    For each proposal gamma*, reports gamma_log_ratio, the difference of
    crf_log_joint at gamma* and gamma (seating and processor-assignment terms
    both depend on gamma), and that difference plus the Gamma(alpha, 1) prior
    ratio on gamma.

    Returns:
        list: One dict per gamma* with keys gamma_star, reduced, full, full_with_prior
    """
    stats = ratio_stats(state)
    t_total = int(stats.t_total.sum())
    doc_totals = stats.n.sum(axis=0)
    base = crf_log_joint(state, weights)
    alpha = state.hyper.alpha
    rows = []
    for g in gamma_stars:
        full = crf_log_joint(state, GlobalWeights(g, weights.xi)) - base
        prior = (alpha - 1.0) * (np.log(g) - np.log(weights.gamma)) - (g - weights.gamma)
        rows.append({
            "gamma_star": float(g),
            "reduced": gamma_log_ratio(weights.gamma, g, t_total, doc_totals),
            "full": float(full),
            "full_with_prior": float(full + prior),
        })
    return rows
