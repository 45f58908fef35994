# confsel/core/errors.py
# Exception types shared across the package. The CLI maps them to exit codes.


class ConfselError(Exception):
    """Base class for all errors raised deliberately by confsel."""

    exit_code: int = 1


class DataFormatError(ConfselError, ValueError):
    """Input data could not be ingested: bad CSV, missing values, wrong coding."""

    exit_code = 3


class EstimationError(ConfselError, RuntimeError):
    """An estimator could not produce an estimate, e.g. one treatment arm is empty."""

    exit_code = 4


class OracleQueryError(ConfselError, ValueError):
    """A perfect-oracle query referenced a vertex that is not observed."""

    exit_code = 4


class ConfigError(ConfselError, ValueError):
    """A settings source (config file, flag value) could not be read or parsed."""

    exit_code = 2
