"""Exception types shared across the package.

The CLI maps these onto exit codes, and the HTTP layer onto status codes,
so raising the right class matters more than the message wording.
"""


class PromptSegError(Exception):
    """Base class for all package errors."""


class ConfigError(PromptSegError):
    """A configuration is structurally invalid (bad dims, out-of-range budget)."""


class InputError(PromptSegError):
    """A runtime input violates an operation's precondition."""


class EvaluationError(PromptSegError):
    """The evaluation driver is missing a required prediction or record."""


class CheckpointError(PromptSegError):
    """A checkpoint cannot be read, or its version/config does not match."""


class DataIOError(PromptSegError):
    """A dataset file is missing or corrupt. Carries the offending path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NaNLossError(PromptSegError):
    """Training aborted on a non-finite loss. Carries the batch diagnostic."""

    def __init__(self, batch_ids, terms):
        super().__init__(
            f"non-finite loss on batch {list(batch_ids)}: terms={terms}"
        )
        self.batch_ids = list(batch_ids)
        self.terms = dict(terms)
