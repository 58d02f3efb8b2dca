"""Exception hierarchy shared by the library, the CLI and the HTTP service.

Each error carries the process exit code the CLI returns for it.
"""


class DrfError(Exception):
    exit_code = 1


class UsageError(DrfError):
    exit_code = 1


class ConfigError(DrfError):
    exit_code = 1


class DataError(DrfError):
    exit_code = 2


class SchemaError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class NumericError(DrfError):
    exit_code = 3


class DegenerateTargetError(NumericError):
    pass


class InsufficientReplicatesError(NumericError):
    pass


class SingularityError(NumericError):
    pass
