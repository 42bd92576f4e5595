class HarnessError(RuntimeError):
    """Base class for scenario, dataset, evaluation and orchestration failures."""


class MissingFileError(HarnessError):
    def __init__(self, path: str):
        self.path = str(path)
        super().__init__(f"Required file not found: {path}")


class MalformedRowError(HarnessError):
    """A dataset CSV row could not be parsed; `line` is 1-based."""

    def __init__(self, path: str, line: int, reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


class InsufficientAssociationError(HarnessError):
    def __init__(self, count: int, required: int):
        self.count = count
        self.required = required
        super().__init__(f"{count} associated pose pairs, at least {required} required")


class ComponentError(HarnessError):
    """A robot, edge, cloud or link failure surfaced by the orchestrator."""

    def __init__(self, component: str, cause: BaseException):
        self.component = component
        self.cause = cause
        super().__init__(f"[{component}] {type(cause).__name__}: {cause}")
