"""Exception hierarchy shared by the library and the command line.

Every error carries a short machine-readable ``code`` and the process exit
status the CLI maps it to (2 usage, 3 config, 4 io, 5 numeric).
"""


class SearthError(Exception):
    code = "error"
    exit_status = 1

    def __init__(self, detail: str = ""):
        super().__init__(detail)
        self.detail = detail


class UsageError(SearthError):
    code = "usage"
    exit_status = 2


class ConfigError(SearthError, ValueError):
    code = "config"
    exit_status = 3


class ShapeError(SearthError, ValueError):
    code = "shape"
    exit_status = 3


class IOFormatError(SearthError, IOError):
    code = "io"
    exit_status = 4


class MissingFileError(IOFormatError):
    code = "missing_file"


class BadMagicError(IOFormatError):
    code = "bad_magic"


class VersionMismatchError(IOFormatError):
    code = "version"


class TruncatedError(IOFormatError):
    code = "truncated"


class CheckpointMismatchError(IOFormatError):
    code = "checkpoint_mismatch"


class NumericError(SearthError, ArithmeticError):
    code = "numeric"
    exit_status = 5
