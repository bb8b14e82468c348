"""Exception types shared across the solvers."""


class InfeasibleError(RuntimeError):
    """Base class for every infeasibility raised by a solver."""


class QoSInfeasibleError(InfeasibleError):
    """Per-user rate floors cannot be met within the power budget."""


class FlowInfeasibleError(InfeasibleError):
    """Backhaul capacity cannot carry the required user traffic."""


class RegionInfeasibleError(InfeasibleError):
    """The positioning feasibility region is (certified) empty."""


class PowerBudgetInfeasibleError(InfeasibleError):
    """A propulsion power threshold below the minimum achievable power."""


class ConfigValidationError(ValueError):
    """Scenario configuration rejected; lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))
