class PipelineError(Exception):
    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(PipelineError):
    exit_code = 1


class DataError(PipelineError):
    """Bad input data. Renders as ``path:line: message`` when the location is known."""

    exit_code = 2

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        location = ""
        if self.path is not None:
            location = self.path if line is None else f"{self.path}:{line}"
        elif line is not None:
            location = f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)
        self.detail = message


class OntologyError(DataError):
    pass


class AnnotationError(DataError):
    pass


class EvaluationError(DataError):
    pass


class EmbeddingError(DataError):
    pass


class FingerprintError(PipelineError):
    exit_code = 3


class CancelledError(PipelineError):
    exit_code = 1
