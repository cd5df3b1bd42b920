"""Exception hierarchy shared across the package."""


class MedrecError(Exception):
    """Base class for all package errors."""


class MalformedCode(MedrecError, ValueError):
    pass


class LevelTooShallow(MedrecError, ValueError):
    pass


class UnknownCode(MedrecError, KeyError):
    def __str__(self) -> str:  # KeyError repr-quotes its message
        return str(self.args[0]) if self.args else ""


class TaxonomyError(MedrecError, ValueError):
    pass


class EmptyVocab(MedrecError, ValueError):
    pass


class AllRecordsUnmapped(MedrecError, ValueError):
    pass


class EmptyLexicon(MedrecError, ValueError):
    pass


class UnknownMedication(MedrecError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class SchemaError(MedrecError, ValueError):
    """A case file line does not match the record schema."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class TooFewPatients(MedrecError, ValueError):
    pass


class DegenerateClustering(MedrecError, ValueError):
    pass


class BackendError(MedrecError, RuntimeError):
    pass


class UnparsableOutput(MedrecError, ValueError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class LengthMismatch(MedrecError, ValueError):
    pass


class ConfigError(MedrecError, ValueError):
    pass


class UnknownExpertId(MedrecError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""
