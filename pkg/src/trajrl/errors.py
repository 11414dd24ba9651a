"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary invalid arguments; the classes
below mark failures callers are expected to branch on.
"""

from __future__ import annotations

import numpy as np


class ControllerInvalidError(ValueError):
    """A controller covariance is not positive definite."""

    def __init__(self, timestep: int):
        self.timestep = timestep
        super().__init__(
            f"controller covariance at timestep {timestep} is not positive definite"
        )


class DivergenceError(RuntimeError):
    """A rollout produced a non-finite state."""

    def __init__(self, timestep: int):
        self.timestep = timestep
        super().__init__(f"state became non-finite at timestep {timestep}")


class SolverError(RuntimeError):
    """The backward pass could not produce a usable controller."""


class DemoFailedError(RuntimeError):
    """A scripted demonstration did not satisfy the success predicate."""

    def __init__(self, message: str, final_state: np.ndarray | None = None):
        super().__init__(message)
        self.final_state = final_state


class TrainingAbortedError(RuntimeError):
    """Training could not continue; carries the learning curve so far."""

    def __init__(self, message: str, curve=None):
        super().__init__(message)
        self.curve = curve


class ConfigError(ValueError):
    """Experiment configuration failed validation; ``path`` names the field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
