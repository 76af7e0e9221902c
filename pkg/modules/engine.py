"""Run orchestration: lanes, phase barrier, trace and checkpoints.

An iteration is a local phase (every lane sweeps its own state, in any
order or concurrently) followed, every ``global_every`` iterations, by an
exclusive global phase. Each lane draws from its own stream and the global
phase from a dedicated one, so results never depend on lane scheduling.
"""

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from loguru import logger

from modules.checkpoint import load_checkpoint, save_checkpoint
from modules.data_eval import f1_score, has_converged, perplexity
from modules.dpmm_sampler import DpState, GaussModel, dp_global_step, log_joint, sweep_lane
from modules.hdp_sampler import (
    CrfState,
    GlobalWeights,
    HdpHyper,
    gamma_mh_step,
    hdp_global_step,
    ratio_stats,
    sweep_crf_lane,
)
from modules.initialization import init_crf_state, init_dp_state
from modules.rand_core import EVAL, GLOBAL, LANE, make_stream
from utils.config import SamplerConfig
from utils.error_handler import ArgumentError, DataIOError, InvariantError, ParseError

LOCAL = "local"
GLOBAL_PHASE = "global"
IDLE = "idle"


@dataclass
class TraceRecord:
    iter: int
    elapsed_ms: float
    local_ms: float
    global_ms: float
    k: int
    accepted: Optional[bool]
    n_per_proc: List[int]
    metric: Optional[float] = None
    log_joint: Optional[float] = None
    gamma: Optional[float] = None
    t_total: Optional[int] = None

    def to_dict(self):
        """Trace line keys; dpmm runs carry log_joint, hdp runs gamma and t_total."""
        out = asdict(self)
        if self.log_joint is None:
            del out["log_joint"]
        else:
            del out["gamma"], out["t_total"]
        return out


@dataclass
class RunResult:
    state: object
    trace: List[TraceRecord] = field(default_factory=list)
    weights: Optional[GlobalWeights] = None


def read_trace(path):
    """Load a JSON-lines trace into a list of dicts."""
    records = []
    try:
        with open(path, "r") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise ParseError(f"invalid trace record: {e.msg}", line=lineno) from e
    except OSError as e:
        raise DataIOError(f"cannot read trace {path}: {e}") from e
    return records


def _rewind_trace(path, last_iter):
    """Drop trace records written after the checkpointed iteration.

    A partial last line left by an interrupted write is dropped too.
    """
    if not os.path.exists(path):
        return
    with open(path, "r") as f:
        lines = [line for line in f if line.strip()]
    kept = []
    for line in lines:
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            continue
        if record.get("iter", 0) <= last_iter:
            kept.append(line if line.endswith("\n") else line + "\n")
    if kept == lines:
        return
    logger.info(f"Discarding {len(lines) - len(kept)} trace records after iteration {last_iter}")
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w") as f:
        f.writelines(kept)
    os.replace(tmp_path, path)


def _point_values(data):
    values = np.asarray(getattr(data, "values", data), dtype=float)
    return values[:, None] if values.ndim == 1 else values


# Lane jobs run in worker threads or processes; they take and return whole lanes.

def _dp_lane_job(lane, model, alpha, stream, debug):
    moved = sweep_lane(lane, model, alpha, stream, debug=debug)
    return lane, stream, moved


def _crf_lane_job(lane, hyper, zeta, stream, debug):
    moved = sweep_crf_lane(lane, hyper, zeta, stream, debug=debug)
    return lane, stream, moved


class Engine:
    """Drives one sampler run.

    Args:
        config (SamplerConfig): Validated run configuration
        data (PointSet or Corpus): Training data for the configured model
        truth (LabelVector, optional): Ground truth for the F1 metric (dpmm)
        test (Corpus, optional): Held-out documents for perplexity (hdp)
    """

    def __init__(self, config, data, truth=None, test=None):
        self.config = config
        self.data = data
        self.truth = truth
        self.test = test
        self.state = None
        self.weights = None
        self.lane_streams = []
        self.global_stream = None
        self.eval_stream = None
        self.phase = IDLE
        self._lanes_out = 0
        self._done = 0
        self._elapsed_before = 0.0
        self._pool = None

    # Setup

    def _make_streams(self):
        P, seed = self.config.procs, self.config.seed
        self.lane_streams = [make_stream(seed, j, LANE) for j in range(P)]
        self.global_stream = make_stream(seed, 0, GLOBAL)
        self.eval_stream = make_stream(seed, 0, EVAL)

    def _initial_state(self):
        cfg = self.config
        kind, k = cfg.init_kind, cfg.init_k
        if cfg.model == "dpmm":
            values = _point_values(self.data)
            model = GaussModel(cfg.mu0, cfg.tau2, cfg.sigma2)
            self.state = init_dp_state(values, model, cfg.alpha, cfg.procs, kind, k, cfg.seed, cfg.kmeans_iters)
            logger.info(f"Initialized {self.state.n_clusters} clusters over {cfg.procs} processors ({cfg.init})")
        else:
            hyper = HdpHyper(cfg.alpha, cfg.procs, cfg.beta, self.data.V)
            self.state = init_crf_state(self.data, hyper, kind, k, cfg.seed, cfg.kmeans_iters)
            self.weights = GlobalWeights.uniform(cfg.gamma_init, cfg.procs)
            logger.info(f"Initialized {self.state.n_topics} topics over {cfg.procs} processors ({cfg.init})")

    def _restore(self, path):
        ckpt = load_checkpoint(path)
        saved = ckpt.config
        for key in ("model", "procs", "seed"):
            if saved.get(key) != getattr(self.config, key):
                raise ArgumentError(
                    f"cannot resume: {key} is {getattr(self.config, key)!r}, checkpoint has {saved.get(key)!r}"
                )
        try:
            sampler = ckpt.state["sampler"]
            if self.config.model == "dpmm":
                self.state = DpState.from_plain(sampler, _point_values(self.data))
            else:
                self.state = CrfState.from_plain(sampler, self.data)
                w = ckpt.state["weights"]
                self.weights = GlobalWeights(w["gamma"], np.asarray(w["xi"]))
            self._make_streams()
            if len(ckpt.rng["lanes"]) != self.config.procs:
                raise ValueError("lane stream count differs from procs")
            for stream, plain in zip(self.lane_streams, ckpt.rng["lanes"]):
                stream.set_state(plain)
            self.global_stream.set_state(ckpt.rng["global"])
            self.eval_stream.set_state(ckpt.rng["eval"])
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ParseError(f"cannot rebuild sampler state: {e}", section="state") from e
        self.state.check()
        self._done = ckpt.iteration
        self._elapsed_before = ckpt.elapsed_ms
        logger.info(f"Resumed from {path} after iteration {self._done}")

    # Phases

    def _local_phase(self):
        cfg = self.config
        self.phase = LOCAL
        lanes = self.state.lanes
        if cfg.model == "dpmm":
            job = _dp_lane_job
            extra = [(self.state.model, self.state.alpha) for _ in lanes]
        else:
            job = _crf_lane_job
            zeta = self.weights.zeta
            extra = [(self.state.hyper, float(zeta[j])) for j in range(len(lanes))]
        moved = 0
        if self._pool is None:
            for j, lane in enumerate(lanes):
                moved += job(lane, *extra[j], self.lane_streams[j], cfg.debug_checks)[2]
        else:
            futures = []
            for j, lane in enumerate(lanes):
                futures.append(self._pool.submit(job, lane, *extra[j], self.lane_streams[j], cfg.debug_checks))
                self._lanes_out += 1
            for j, future in enumerate(futures):
                lane, stream, count = future.result()
                lanes[j] = lane
                self.lane_streams[j] = stream
                self._lanes_out -= 1
                moved += count
        self.phase = IDLE
        return moved

    def _global_phase(self):
        cfg = self.config
        if self._lanes_out:
            raise InvariantError(f"global phase started with {self._lanes_out} lanes still sweeping")
        self.phase = GLOBAL_PHASE
        if cfg.model == "dpmm":
            result = dp_global_step(self.state, self.global_stream, cfg.ratio_mode, cfg.move_subset)
            accepted = result.accepted
        else:
            self.weights, result = hdp_global_step(self.state, self.weights, self.global_stream, cfg.move_subset)
            accepted = result.accepted
            self.weights, _ = gamma_mh_step(
                self.weights, ratio_stats(self.state), self.state.n_docs, self.global_stream, cfg.gamma_step
            )
        self.phase = IDLE
        return accepted

    def _metric(self, it):
        cfg = self.config
        if it % cfg.eval_every:
            return None
        if cfg.model == "dpmm" and self.truth is not None:
            z, _ = self.state.assignments()
            return f1_score(z, self.truth)
        if cfg.model == "hdp" and self.test is not None:
            return perplexity(
                self.state, self.weights, self.state.hyper, self.test, self.eval_stream, cfg.perplexity_passes
            )
        return None

    def _record(self, it, started, local_ms, global_ms, accepted, metric):
        elapsed = self._elapsed_before + (time.perf_counter() - started) * 1000.0
        record = TraceRecord(
            iter=it,
            elapsed_ms=elapsed,
            local_ms=local_ms,
            global_ms=global_ms,
            k=self.state.n_clusters if self.config.model == "dpmm" else self.state.n_topics,
            accepted=accepted,
            n_per_proc=self.state.n_per_proc(),
            metric=metric,
        )
        if self.config.model == "dpmm":
            record.log_joint = log_joint(self.state)
        else:
            record.gamma = float(self.weights.gamma)
            record.t_total = int(self.state.t_total)
        return record

    def _rng_plain(self):
        return {
            "lanes": [s.get_state() for s in self.lane_streams],
            "global": self.global_stream.get_state(),
            "eval": self.eval_stream.get_state(),
        }

    def _checkpoint(self, elapsed_ms):
        save_checkpoint(
            self.config.checkpoint_path, self.config, self.state, self._rng_plain(),
            self._done, elapsed_ms, weights=self.weights,
        )

    def _make_pool(self):
        cfg = self.config
        if cfg.executor == "serial" or cfg.procs == 1:
            return None
        workers = cfg.workers or min(cfg.procs, os.cpu_count() or 1)
        if cfg.executor == "thread":
            return ThreadPoolExecutor(max_workers=workers)
        return ProcessPoolExecutor(max_workers=workers)

    def _dump_diagnostics(self, exc):
        logger.error(f"Invariant failure after iteration {self._done} in phase '{self.phase}': {exc}")
        if self.state is not None:
            logger.error(f"Per-lane counts: {self.state.n_per_proc()}")

    # Main loop

    def run(self, resume=None):
        """Execute iterations up to config.sweeps.

        Args:
            resume (str, optional): Checkpoint to continue from. Defaults to None.

        Returns:
            RunResult: Final state, weights (hdp) and the trace records of this call
        """
        cfg = self.config
        if resume:
            self._restore(resume)
        else:
            self._make_streams()
            self._initial_state()
        if cfg.debug_checks:
            self.state.check()

        trace = []
        metrics = []
        started = time.perf_counter()
        trace_file = None
        self._pool = self._make_pool()
        try:
            if cfg.trace_path:
                trace_dir = os.path.dirname(os.path.abspath(cfg.trace_path))
                os.makedirs(trace_dir, exist_ok=True)
                if resume:
                    _rewind_trace(cfg.trace_path, self._done)
                trace_file = open(cfg.trace_path, "a" if resume else "w")
            for it in range(self._done + 1, cfg.sweeps + 1):
                t0 = time.perf_counter()
                self._local_phase()
                t1 = time.perf_counter()
                accepted = None
                if it % cfg.global_every == 0:
                    accepted = self._global_phase()
                if cfg.debug_checks:
                    self.state.check()
                t2 = time.perf_counter()
                self._done = it

                metric = self._metric(it)
                record = self._record(it, started, (t1 - t0) * 1000.0, (t2 - t1) * 1000.0, accepted, metric)
                trace.append(record)
                if trace_file is not None:
                    trace_file.write(json.dumps(record.to_dict()) + "\n")
                    trace_file.flush()
                logger.debug(f"iter {it}: k={record.k} accepted={accepted} metric={metric}")

                if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                    self._checkpoint(record.elapsed_ms)
                if metric is not None:
                    metrics.append(metric)
                    if cfg.stop_on_convergence and has_converged(metrics, cfg.convergence_window, cfg.convergence_tol):
                        logger.info(f"Metric converged at iteration {it}, stopping")
                        break
        except InvariantError as e:
            self._dump_diagnostics(e)
            raise
        except (OSError, DataIOError) as e:
            logger.error(f"Run aborted after iteration {self._done}: {e}")
            if cfg.checkpoint_path and self._lanes_out == 0 and self.state is not None:
                try:
                    self._checkpoint(self._elapsed_before + (time.perf_counter() - started) * 1000.0)
                except DataIOError as flush_error:
                    logger.error(f"Checkpoint flush failed: {flush_error}")
            if isinstance(e, OSError):
                raise DataIOError(str(e)) from e
            raise
        finally:
            if trace_file is not None:
                trace_file.close()
            if self._pool is not None:
                self._pool.shutdown()
                self._pool = None

        logger.info(f"Finished {self._done} iterations")
        return RunResult(self.state, trace, self.weights)


def run(config, data, truth=None, test=None, resume=None):
    """Run a sampler end to end.

    Args:
        config (SamplerConfig): Run configuration, validated here
        data (PointSet or Corpus): Training data
        truth (LabelVector, optional): Ground-truth labels for F1
        test (Corpus, optional): Held-out documents for perplexity
        resume (str, optional): Checkpoint to continue from

    Returns:
        RunResult: Final state and trace
    """
    if not isinstance(config, SamplerConfig):
        raise ArgumentError("config must be a SamplerConfig")
    config.validate()
    return Engine(config, data, truth=truth, test=test).run(resume=resume)
