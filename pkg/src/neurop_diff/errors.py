"""Exception types carrying the CLI exit code they map to."""


class NeurOpDiffError(Exception):
    exit_code = 1


class ConfigError(NeurOpDiffError):
    exit_code = 2


class DataError(NeurOpDiffError):
    exit_code = 3


class CheckpointError(NeurOpDiffError):
    exit_code = 4


class NumericalError(NeurOpDiffError):
    exit_code = 5
