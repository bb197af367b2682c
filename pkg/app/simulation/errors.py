from __future__ import annotations


class SimulationError(RuntimeError):
    pass


class ConfigError(SimulationError):
    pass


class BudgetExceededError(SimulationError):
    def __init__(self, slot: int, attempted: int, budget: int):
        self.slot = slot
        self.attempted = attempted
        self.budget = budget
        super().__init__(
            f"Jamming budget exceeded at slot {slot}: {attempted} units attempted, budget is {budget}"
        )


class UnknownNodeError(SimulationError):
    pass


class ProbabilityRangeError(SimulationError):
    pass


class ModeMismatchError(SimulationError):
    pass


class DegenerateInputError(SimulationError):
    pass


class SlotRangeError(SimulationError):
    pass
