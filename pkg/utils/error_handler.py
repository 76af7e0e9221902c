import sys
import threading
from loguru import logger


class AuxmixError(Exception):
    """Base class for every error raised by auxmix."""

    category = "internal"
    exit_code = 4


class ArgumentError(AuxmixError):
    """Invalid command-line flag or configuration value."""

    category = "argument"
    exit_code = 2


class DataIOError(AuxmixError):
    """A data, trace or checkpoint file could not be read or written."""

    category = "io"
    exit_code = 3


class ParseError(DataIOError):
    """A file was readable but malformed.

    Args:
        message (str): What went wrong
        line (int, optional): 1-based line number of the offending line
        section (str, optional): Named section of a structured file
    """

    category = "parse"

    def __init__(self, message, line=None, section=None):
        self.line = line
        self.section = section
        where = ""
        if line is not None:
            where = f"line {line}: "
        elif section is not None:
            where = f"section '{section}': "
        super().__init__(f"{where}{message}")


class UnsupportedVersionError(ParseError):
    category = "version"


class DomainError(AuxmixError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    category = "domain"


class InvariantError(AuxmixError):
    """Sampler state failed an internal consistency check."""

    category = "invariant"


class ErrorHandler:
    """Global error handler for crash logging and exit-code mapping."""

    @staticmethod
    def init():
        """Initialize global error handling."""
        sys.excepthook = ErrorHandler.handle_exception
        threading.excepthook = ErrorHandler.handle_thread_exception

    @staticmethod
    def handle_exception(exc_type, exc_value, exc_traceback):
        """Handle uncaught exceptions.

        Args:
            exc_type: Exception type
            exc_value: Exception value
            exc_traceback: Exception traceback
        """
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return

        logger.opt(exception=(exc_type, exc_value, exc_traceback)).error("Uncaught exception")

    @staticmethod
    def handle_thread_exception(args):
        """Handle uncaught exceptions in lane threads.

        Args:
            args: Thread exception arguments
        """
        if args.exc_type == SystemExit:
            return

        name = args.thread.name if args.thread else "?"
        logger.opt(exception=(args.exc_type, args.exc_value, args.exc_traceback)).error(
            f"Uncaught thread exception in {name}"
        )

    @staticmethod
    def exit_code_for(exc):
        """Map an exception onto the CLI exit-code table.

        Args:
            exc (BaseException): The exception that ended the command

        Returns:
            int: 2 argument error, 3 I/O error, 4 numerical/invariant failure
        """
        if isinstance(exc, AuxmixError):
            return exc.exit_code
        if isinstance(exc, OSError):
            return DataIOError.exit_code
        return AuxmixError.exit_code

    @staticmethod
    def category_for(exc):
        """Category string used in the `error:<category>:` prefix."""
        if isinstance(exc, AuxmixError):
            return exc.category
        if isinstance(exc, OSError):
            return DataIOError.category
        return AuxmixError.category

    @staticmethod
    def format_error(exc):
        """One-line machine-parseable error message.

        Args:
            exc (BaseException): The exception to describe

        Returns:
            str: `error:<category>:<message>` on a single line
        """
        message = " ".join(str(exc).split()) or type(exc).__name__
        return f"error:{ErrorHandler.category_for(exc)}:{message}"
