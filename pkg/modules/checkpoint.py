"""Versioned JSON checkpoints.

Top-level keys are exactly ``version``, ``config``, ``state`` and ``rng``.
``state`` holds the run progress (iteration, elapsed time) next to the
sampler state; ``rng`` holds every stream's counter state.
"""

import json
import os
from dataclasses import dataclass

from loguru import logger

from utils.error_handler import DataIOError, ParseError, UnsupportedVersionError

CHECKPOINT_VERSION = 1
SECTIONS = ("version", "config", "state", "rng")


@dataclass
class Checkpoint:
    version: int
    config: dict
    state: dict
    rng: dict

    @property
    def iteration(self):
        return self.state["iter"]

    @property
    def elapsed_ms(self):
        return self.state["elapsed_ms"]


def save_checkpoint(path, config, sampler_state, rng, iteration, elapsed_ms, weights=None):
    """Write a checkpoint atomically (temp file + rename).

    Args:
        path (str): Destination file
        config (SamplerConfig): Run configuration, echoed into the file
        sampler_state (DpState or CrfState): State to save
        rng (dict): Stream states from RngStream.get_state, keyed by role
        iteration (int): Last completed iteration
        elapsed_ms (float): Wall time spent so far
        weights (GlobalWeights, optional): gamma and xi for HDP runs
    """
    state = {
        "iter": int(iteration),
        "elapsed_ms": float(elapsed_ms),
        "sampler": sampler_state.to_plain(),
    }
    if weights is not None:
        state["weights"] = {"gamma": float(weights.gamma), "xi": [float(v) for v in weights.xi]}
    payload = {"version": CHECKPOINT_VERSION, "config": config.to_dict(), "state": state, "rng": rng}
    tmp = f"{path}.tmp"
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(tmp, "w") as f:
            json.dump(payload, f)
        os.replace(tmp, path)
    except OSError as e:
        raise DataIOError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint written to {path} at iteration {iteration}")


def load_checkpoint(path):
    """Read and validate a checkpoint file.

    Args:
        path (str): Checkpoint file

    Returns:
        Checkpoint: Parsed sections; nothing is built from a damaged file
    """
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read checkpoint {path}: {e}") from e
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"not valid JSON ({e.msg})", section="file") from e
    if not isinstance(payload, dict):
        raise ParseError("checkpoint must be a JSON object", section="file")
    for section in SECTIONS:
        if section not in payload:
            raise ParseError("missing", section=section)
    if payload["version"] != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint version {payload['version']} is not supported (expected {CHECKPOINT_VERSION})",
            section="version",
        )
    state = payload["state"]
    if not isinstance(state, dict) or not {"iter", "elapsed_ms", "sampler"} <= set(state):
        raise ParseError("needs iter, elapsed_ms and sampler", section="state")
    rng = payload["rng"]
    if not isinstance(rng, dict) or not {"lanes", "global", "eval"} <= set(rng):
        raise ParseError("needs lanes, global and eval stream states", section="rng")
    if not isinstance(payload["config"], dict):
        raise ParseError("must be a mapping", section="config")
    return Checkpoint(payload["version"], payload["config"], state, rng)
