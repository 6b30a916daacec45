"""Pipeline error types; each maps to a CLI exit code."""

from __future__ import annotations


class PipelineError(Exception):
    exit_code = 1

    def __init__(self, message: str, stage: str = "", path: str = "", where: str = ""):
        self.stage = stage
        self.path = path
        self.where = where
        parts = [p for p in (stage, path, where) if p]
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class InputFormatError(PipelineError):
    exit_code = 2


class ConfigError(PipelineError):
    exit_code = 3


class NumericalError(PipelineError):
    exit_code = 4
