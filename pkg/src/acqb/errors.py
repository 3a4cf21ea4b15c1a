"""Exception and warning types raised across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition (e.g. served an absent job)."""


class GenerationError(RuntimeError):
    """Instance generation could not satisfy its constraints."""


class NumericalError(RuntimeError):
    """Linear algebra failed (e.g. a design matrix lost positive definiteness)."""


class ConfigError(ValueError):
    """Invalid experiment or policy configuration."""


class AggregationError(ValueError):
    """Run series cannot be aggregated together."""


class TrainingError(RuntimeError):
    """Contrastive training diverged."""


class EstimationWarning(RuntimeWarning):
    """Newton iterations hit the cap before reaching the gradient tolerance."""


class DegenerateUtilityWarning(RuntimeWarning):
    """Min-max normalization saw identical raw utilities."""


class SamplingWarning(UserWarning):
    """A balanced-sampling group had fewer items than requested."""
