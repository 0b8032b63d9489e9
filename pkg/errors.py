"""
异常层次：库代码只抛出这些异常，命令行入口按 exit_code 退出
  1 = 用法错误，2 = 数据错误，3 = 运行时 / 数值错误
"""

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class PJFNNError(Exception):
    exit_code = EXIT_RUNTIME


# ---------- 用法 / 配置 ----------
class UsageError(PJFNNError, ValueError):
    exit_code = EXIT_USAGE


class ConfigError(PJFNNError, ValueError):
    exit_code = EXIT_USAGE


# ---------- 数据 ----------
class DataError(PJFNNError, ValueError):
    exit_code = EXIT_DATA


class CorpusParseError(DataError):
    def __init__(self, path: str, line: int, column: int, message: str):
        self.path, self.line, self.column = path, line, column
        super().__init__(f"{path}:{line}:{column}: {message}")


class ReferentialIntegrityError(DataError):
    pass


class DuplicateIdError(DataError):
    pass


class EmptyDocumentError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class UnderfullSplitError(DataError):
    pass


class NotFoundError(DataError):
    pass


class SamplingError(DataError):
    pass


class InsufficientVocabularyError(DataError):
    pass


# ---------- 检查点 ----------
class CheckpointError(DataError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointIOError(CheckpointError):
    pass


# ---------- 运行时 / 数值 ----------
class NumericError(PJFNNError, ArithmeticError):
    exit_code = EXIT_RUNTIME


class DimensionError(PJFNNError, ValueError):
    exit_code = EXIT_RUNTIME


class ContractError(PJFNNError, ValueError):
    exit_code = EXIT_RUNTIME


class SequenceTooShortError(PJFNNError, ValueError):
    exit_code = EXIT_RUNTIME


class DegenerateBatchError(PJFNNError, ValueError):
    exit_code = EXIT_RUNTIME


class UndefinedMetricError(PJFNNError, ValueError):
    exit_code = EXIT_RUNTIME
