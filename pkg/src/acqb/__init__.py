"""Contextual queueing bandits with multinomial-logit feedback.

Queued jobs with contexts are routed to size-K assortments of servers; users
pick one server or none (MNL choice), and unserved jobs retry. ACQB combines
forced exploration with Gaussian Thompson sampling on a regularized MLE, and
is benchmarked against baselines on a coupled optimal-policy shadow queue.
"""

__version__ = "0.1.0"

from .errors import (AggregationError, ConfigError, ContractViolation, DomainError,  # noqa: E402
                     EstimationWarning, GenerationError, NumericalError, TrainingError)
from .mnl import ChoiceDistribution, choice_probs, departure_rate, sample_choice  # noqa: E402
from .queue_env import MnlInstance, QueueState, generate_instance, step  # noqa: E402
from .policies import POLICY_NAMES, make_policy  # noqa: E402
from .simulate import coupled_run  # noqa: E402

__all__ = [
    "AggregationError", "ConfigError", "ContractViolation", "DomainError", "EstimationWarning",
    "GenerationError", "NumericalError", "TrainingError",
    "ChoiceDistribution", "choice_probs", "departure_rate", "sample_choice",
    "MnlInstance", "QueueState", "generate_instance", "step",
    "POLICY_NAMES", "make_policy", "coupled_run",
]
