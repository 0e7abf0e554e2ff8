"""Exception and warning types shared across the package."""


class CausalGapError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(CausalGapError):
    """Input file does not provide the columns the schema maps."""


class RowError(CausalGapError):
    """A single input row violates the schema (bad cell, bad enum, bad number)."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class EmptyDataError(CausalGapError):
    """No usable rows survived ingestion or filtering."""


class DesignSpecError(CausalGapError):
    """A design formula references unknown fields or is otherwise malformed."""


class DegenerateProblemError(CausalGapError):
    """A numerical problem is degenerate beyond repair (rank, arms, scale)."""


class StageError(CausalGapError):
    """A pipeline stage failed or its inputs are missing."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


class SeparationWarning(UserWarning):
    """Logistic fit shows signs of (quasi-)separation; coefficients diverge."""


class RankDeficiencyWarning(UserWarning):
    """Exactly-collinear design columns were pruned before solving."""
