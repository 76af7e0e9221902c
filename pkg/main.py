# First import only the setup_logger and initialize it immediately
from utils.logger import setup_logger
import argparse
import os
import sys
from contextlib import contextmanager

# Initialize the global logger
logger = setup_logger()

# Ensure modules directory is in path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from modules.data_eval import (
    f1_score,
    gen_synth,
    gen_synth_corpus,
    read_bow,
    read_labels,
    read_points_csv,
    split_corpus,
    write_bow,
    write_labels,
    write_points_csv,
)
from modules.engine import Engine
from utils.config import Config, normalize_ratio_mode, parse_init
from utils.error_handler import ArgumentError, DomainError, ErrorHandler

__version__ = "0.1.0"
LOG_LEVELS = ("TRACE", "DEBUG", "INFO", "WARNING", "ERROR")


@contextmanager
def _checked_arguments():
    """Report parameter checks failed by a generator as argument errors"""
    try:
        yield
    except DomainError as e:
        raise ArgumentError(str(e)) from e


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of printing usage and exiting."""

    def error(self, message):
        raise ArgumentError(message)


def _init_spec(value):
    parse_init(value)
    return value


def _ratio_mode(value):
    mode = normalize_ratio_mode(value)
    if mode not in ("paper", "always_accept"):
        raise argparse.ArgumentTypeError(f"invalid ratio mode {value!r} (paper or always-accept)")
    return mode


def _add_run_flags(sub):
    """Flags shared by fit-dpmm and fit-hdp."""
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--procs", type=int)
    sub.add_argument("--sweeps", type=int)
    sub.add_argument("--global-every", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--init", type=_init_spec)
    sub.add_argument("--trace", required=True)
    sub.add_argument("--checkpoint")
    sub.add_argument("--checkpoint-every", type=int)
    sub.add_argument("--resume")
    sub.add_argument("--config")
    sub.add_argument("--executor", choices=("serial", "thread", "process"))
    sub.add_argument("--workers", type=int)
    sub.add_argument("--log-file")
    sub.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, default="INFO")


def build_parser():
    parser = CliParser(prog="auxmix", description="Parallel exact MCMC for DP mixtures and HDP topic models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    gen = subs.add_parser("gen-synth", help="Write a synthetic univariate Gaussian mixture")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--k", type=int, required=True)
    gen.add_argument("--mean-low", type=float, required=True)
    gen.add_argument("--mean-high", type=float, required=True)
    gen.add_argument("--var", type=float, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--labels-out", required=True)

    corpus = subs.add_parser("gen-corpus", help="Write a synthetic bag-of-words corpus")
    corpus.add_argument("--docs", type=int, required=True)
    corpus.add_argument("--topics", type=int, required=True)
    corpus.add_argument("--vocab", type=int, required=True)
    corpus.add_argument("--doc-len", type=int, required=True)
    corpus.add_argument("--seed", type=int, required=True)
    corpus.add_argument("--out", required=True)
    corpus.add_argument("--test-out")
    corpus.add_argument("--test-fraction", type=float, default=0.1)

    dpmm = subs.add_parser("fit-dpmm", help="Fit a DP mixture of Gaussians")
    dpmm.add_argument("--data", required=True)
    dpmm.add_argument("--truth")
    dpmm.add_argument("--mu0", type=float)
    dpmm.add_argument("--tau2", type=float)
    dpmm.add_argument("--sigma2", type=float)
    dpmm.add_argument("--ratio-mode", type=_ratio_mode)
    dpmm.add_argument("--labels-out")
    _add_run_flags(dpmm)

    hdp = subs.add_parser("fit-hdp", help="Fit an HDP topic model")
    hdp.add_argument("--corpus", required=True)
    hdp.add_argument("--test")
    hdp.add_argument("--test-fraction", type=float)
    hdp.add_argument("--beta", type=float)
    hdp.add_argument("--gamma-step", type=float)
    _add_run_flags(hdp)

    f1 = subs.add_parser("eval-f1", help="Pairwise F1 between two label files")
    f1.add_argument("--pred", required=True)
    f1.add_argument("--truth", required=True)
    return parser


class AuxmixApp:
    """Runs one parsed command"""

    def __init__(self, args):
        self.args = args

    def run(self):
        handler = {
            "gen-synth": self.gen_synth,
            "gen-corpus": self.gen_corpus,
            "fit-dpmm": self.fit_dpmm,
            "fit-hdp": self.fit_hdp,
            "eval-f1": self.eval_f1,
        }[self.args.command]
        handler()
        return 0

    def _sampler_config(self, model):
        """Config file values, then explicit flags on top; validated before any compute"""
        args = self.args
        config = Config(args.config)
        overrides = {
            "model": model,
            "alpha": args.alpha,
            "procs": args.procs,
            "sweeps": args.sweeps,
            "global_every": args.global_every,
            "seed": args.seed,
            "init": args.init,
            "trace_path": args.trace,
            "checkpoint_path": args.checkpoint,
            "checkpoint_every": args.checkpoint_every,
            "executor": args.executor,
            "workers": args.workers,
        }
        if model == "dpmm":
            overrides.update(mu0=args.mu0, tau2=args.tau2, sigma2=args.sigma2, ratio_mode=args.ratio_mode)
        else:
            overrides.update(beta=args.beta, gamma_step=args.gamma_step, test_fraction=args.test_fraction)
        return config.merge(overrides).to_sampler_config()

    def gen_synth(self):
        args = self.args
        with _checked_arguments():
            points, labels = gen_synth(args.n, args.k, args.mean_low, args.mean_high, args.var, args.seed)
        write_points_csv(points, args.out)
        write_labels(labels, args.labels_out)
        logger.info(f"Wrote {points.n} points to {args.out}")

    def gen_corpus(self):
        args = self.args
        with _checked_arguments():
            corpus = gen_synth_corpus(args.docs, args.topics, args.vocab, args.doc_len, args.seed)
        if args.test_out:
            with _checked_arguments():
                train, test = split_corpus(corpus, args.test_fraction)
            write_bow(train, args.out)
            write_bow(test, args.test_out)
            logger.info(f"Wrote {train.M} training and {test.M} test documents")
        else:
            write_bow(corpus, args.out)
            logger.info(f"Wrote {corpus.M} documents to {args.out}")

    def fit_dpmm(self):
        args = self.args
        config = self._sampler_config("dpmm")
        data = read_points_csv(args.data)
        truth = read_labels(args.truth) if args.truth else None
        if truth is not None and len(truth) != data.n:
            raise ArgumentError(f"--truth has {len(truth)} labels for {data.n} points")
        result = Engine(config, data, truth=truth).run(resume=args.resume)
        if args.labels_out:
            z, _ = result.state.assignments()
            write_labels(z, args.labels_out)
        last = result.trace[-1] if result.trace else None
        if last is not None:
            logger.info(f"Final: k={last.k} log_joint={last.log_joint:.3f} metric={last.metric}")

    def fit_hdp(self):
        args = self.args
        config = self._sampler_config("hdp")
        corpus = read_bow(args.corpus)
        test = read_bow(args.test) if args.test else None
        if test is None:
            if corpus.M < 2:
                logger.warning(f"Only {corpus.M} document, running without held-out perplexity")
            else:
                corpus, test = split_corpus(corpus, config.test_fraction)
                logger.info(f"Holding out the last {test.M} of {corpus.M + test.M} documents for perplexity")
        if test is not None and test.V > corpus.V:
            raise ArgumentError(f"test vocabulary {test.V} exceeds training vocabulary {corpus.V}")
        result = Engine(config, corpus, test=test).run(resume=args.resume)
        last = result.trace[-1] if result.trace else None
        if last is not None:
            logger.info(f"Final: topics={last.k} gamma={last.gamma:.4f} tables={last.t_total} metric={last.metric}")

    def eval_f1(self):
        pred = read_labels(self.args.pred)
        truth = read_labels(self.args.truth)
        print(f"{f1_score(pred, truth):.6f}")


def dispatch(argv=None):
    """Parse argv, run the command and map failures to exit codes.

    Args:
        argv (list, optional): Arguments without the program name. Defaults to sys.argv[1:].

    Returns:
        int: 0 success, 2 argument error, 3 I/O error, 4 numerical or invariant failure
    """
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "log_file", None) or getattr(args, "log_level", "INFO") != "INFO":
            setup_logger(args.log_file, args.log_level)
        return AuxmixApp(args).run()
    except SystemExit as e:
        # --version and --help exit through argparse
        return e.code if isinstance(e.code, int) else 0
    except Exception as e:
        logger.debug(f"{type(e).__name__}: {e}")
        print(ErrorHandler.format_error(e), file=sys.stderr)
        return ErrorHandler.exit_code_for(e)


if __name__ == "__main__":
    ErrorHandler.init()
    sys.exit(dispatch())
