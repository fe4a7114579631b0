"""Exception hierarchy shared by all modules."""


class ConceptNavError(Exception):
    """Base class for every error raised by this package."""


class MapFormatError(ConceptNavError, ValueError):
    """A map image or its metadata could not be parsed."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ValidationError(ConceptNavError, ValueError):
    """Input violates a documented invariant or precondition."""


class ModelFormatError(ValidationError):
    """A serialized model has the wrong version or schema."""


class InstructionError(ConceptNavError, ValueError):
    """The instruction carries no usable (in-vocabulary) word."""


class PlanningError(ConceptNavError):
    """No trajectory could be produced."""

    reason = "planning-infeasible"


class NoPathError(PlanningError):
    reason = "no-path"


class GoalInfeasibleError(PlanningError):
    reason = "goal-infeasible"


class BudgetExceededError(ValidationError):
    """Exhaustive enumeration would exceed the configured budget."""
