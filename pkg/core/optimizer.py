"""
Adaptive-moment optimizer over named numpy parameter arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass
class AdamOptimizer:
    """
    Bias-corrected first/second moment update. Parameters are updated in
    place, so parameter tables that share the arrays see the step.
    """

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ContractViolation(f"learning rate must be >= 0, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractViolation("optimizer betas must lie in [0, 1)")

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            if name not in grads:
                raise ContractViolation(f"missing gradient for parameter {name}")
            if grads[name].shape != value.shape:
                raise ContractViolation(
                    f"gradient shape {grads[name].shape} does not match parameter {name} {value.shape}"
                )

        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        step_size = self.learning_rate / bc1

        for name, value in params.items():
            g = grads[name]
            if name not in self.first_moment:
                self.first_moment[name] = np.zeros_like(value)
                self.second_moment[name] = np.zeros_like(value)
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            value -= step_size * m / (np.sqrt(v / bc2) + self.epsilon)
