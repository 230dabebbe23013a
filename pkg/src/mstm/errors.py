"""Exception hierarchy. Every error names the module that raised it."""

from __future__ import annotations


class MSTMError(Exception):
    module = "mstm"

    def __init__(self, message: str, module: str | None = None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class UsageError(MSTMError, ValueError):
    module = "core"


class FormatError(MSTMError, ValueError):
    module = "io"


class LoadError(MSTMError, ValueError):
    module = "io"


class BuildError(MSTMError, RuntimeError):
    module = "index"


class TrainingError(MSTMError, RuntimeError):
    module = "weights"


class SetupError(MSTMError, RuntimeError):
    module = "eval"
