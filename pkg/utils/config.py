import os
from dataclasses import asdict, dataclass, fields
from typing import Optional

import yaml
from loguru import logger

from utils.error_handler import ArgumentError, DataIOError, ParseError

MODEL_KINDS = ("dpmm", "hdp")
RATIO_MODES = ("paper", "always_accept")
EXECUTORS = ("serial", "thread", "process")


@dataclass
class SamplerConfig:
    """Run control for one sampler run.

    `procs` is the model's P (number of auxiliary processes), not a core count.
    """

    model: str = "dpmm"
    alpha: float = 1.0
    procs: int = 1
    sweeps: int = 100
    global_every: int = 1
    seed: int = 0
    # dpmm
    mu0: float = 0.0
    tau2: float = 1.0
    sigma2: float = 1.0
    ratio_mode: str = "paper"
    # hdp
    beta: float = 0.01
    gamma_step: float = 0.5
    gamma_init: float = 1.0
    perplexity_passes: int = 50
    test_fraction: float = 0.1
    # shared
    init: str = "kmeans:80"
    kmeans_iters: int = 20
    move_subset: int = 0
    trace_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    checkpoint_every: int = 0
    executor: str = "process"
    workers: int = 0
    eval_every: int = 1
    stop_on_convergence: bool = False
    convergence_window: int = 10
    convergence_tol: float = 1e-3
    debug_checks: bool = False

    @property
    def init_kind(self):
        return parse_init(self.init)[0]

    @property
    def init_k(self):
        return parse_init(self.init)[1]

    def validate(self):
        """Check field ranges, raising ArgumentError naming the field.

        Returns:
            SamplerConfig: self, for chaining
        """
        if self.model not in MODEL_KINDS:
            raise ArgumentError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.procs < 1:
            raise ArgumentError(f"procs must be >= 1, got {self.procs}")
        if self.sweeps < 1:
            raise ArgumentError(f"sweeps must be >= 1, got {self.sweeps}")
        if self.global_every < 1:
            raise ArgumentError(f"global_every must be >= 1, got {self.global_every}")
        for name in ("alpha", "tau2", "sigma2", "beta", "gamma_step", "gamma_init"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.ratio_mode not in RATIO_MODES:
            raise ArgumentError(f"ratio_mode must be one of {RATIO_MODES}, got {self.ratio_mode!r}")
        if self.executor not in EXECUTORS:
            raise ArgumentError(f"executor must be one of {EXECUTORS}, got {self.executor!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ArgumentError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        for name in ("move_subset", "workers", "kmeans_iters", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("eval_every", "perplexity_passes", "convergence_window"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if bool(self.checkpoint_path) != (self.checkpoint_every > 0):
            raise ArgumentError("checkpoint_path and checkpoint_every must be given together")
        parse_init(self.init)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        """Build a config from a plain mapping, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ArgumentError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**values)


def parse_init(spec):
    """Split an init spec such as `kmeans:80` into ("kmeans", 80)."""
    kind, _, count = str(spec).partition(":")
    if kind not in ("kmeans", "random"):
        raise ArgumentError(f"init must be kmeans:INT or random:INT, got {spec!r}")
    try:
        k = int(count)
    except ValueError:
        raise ArgumentError(f"init must be kmeans:INT or random:INT, got {spec!r}") from None
    if k < 1:
        raise ArgumentError(f"init cluster count must be >= 1, got {k}")
    return kind, k


def normalize_ratio_mode(value):
    """Accept the CLI spelling `always-accept` as well as `always_accept`."""
    return value.replace("-", "_") if value else value


class Config:
    """Configuration manager for sampler runs"""

    def __init__(self, config_path=None):
        """Initialize configuration manager

        Args:
            config_path (str, optional): Path to a YAML or JSON config file. Defaults to None.
        """
        self.config = self._get_default_config()
        self.config_path = config_path
        if config_path:
            self.load_config()

    def load_config(self):
        """Load configuration from file, merged over the defaults"""
        if not os.path.exists(self.config_path):
            raise DataIOError(f"config file not found: {self.config_path}")
        try:
            with open(self.config_path, "r") as f:
                loaded = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ParseError(f"invalid config file {self.config_path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ParseError(f"config file {self.config_path} must hold a mapping")
        if "ratio_mode" in loaded:
            loaded["ratio_mode"] = normalize_ratio_mode(loaded["ratio_mode"])
        self.merge(loaded)
        logger.info(f"Loaded configuration from {self.config_path}")

    def merge(self, overrides):
        """Merge values over the current configuration, skipping None values

        Args:
            overrides (dict): Values to apply
        """
        unknown = sorted(set(overrides) - set(self.config))
        if unknown:
            raise ArgumentError(f"unknown configuration keys: {', '.join(unknown)}")
        for key, value in overrides.items():
            if value is not None:
                self.config[key] = value
        return self

    def get(self, key, default=None):
        """Get configuration value

        Args:
            key (str): Configuration key
            default: Default value if key not found

        Returns:
            Configuration value
        """
        return self.config.get(key, default)

    def to_sampler_config(self):
        """Build and validate the SamplerConfig

        Returns:
            SamplerConfig: Validated run configuration
        """
        return SamplerConfig.from_dict(dict(self.config)).validate()

    def _get_default_config(self):
        """Get default configuration

        Returns:
            dict: Default configuration
        """
        return SamplerConfig().to_dict()

    def __iter__(self):
        """Make Config object iterable"""
        return iter(self.config)

    def __getitem__(self, key):
        """Allow dictionary-style access to config values"""
        return self.config[key]

    def items(self):
        """Return config items"""
        return self.config.items()
