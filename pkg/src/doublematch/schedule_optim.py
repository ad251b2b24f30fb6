"""Cosine learning-rate schedule and Nesterov-momentum SGD.

The schedule is eta(k) = eta0 * cos(gamma * pi * k / (2K)) with gamma in
(0,1), so the rate decays smoothly but never reaches zero.

Weight decay never enters the optimizer: it is a loss term, so sgd_step is
parameter-norm-neutral under zero gradients.
"""

import math
from dataclasses import dataclass

import torch


class NonFiniteGradient(RuntimeError):
    """Raised when a gradient contains NaN/Inf; the step is aborted."""


@dataclass(frozen=True)
class LrSchedule:
    eta0: float
    gamma: float
    total_steps: int

    def __post_init__(self):
        if self.eta0 <= 0.0:
            raise ValueError("eta0 must be > 0")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0,1)")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def lr_at(schedule, k):
    """eta0 * cos(gamma * pi * k / (2K)) for 0 <= k <= K."""
    if not (0 <= k <= schedule.total_steps):
        raise ValueError("step %d outside [0, %d]" % (k, schedule.total_steps))
    return schedule.eta0 * math.cos(schedule.gamma * math.pi * k / (2.0 * schedule.total_steps))


class NesterovSgd:
    """SGD with Nesterov momentum, lookahead-in-gradient formulation:

        velocity <- momentum * velocity + grad
        param    <- param - lr * (grad + momentum * velocity)

    This is the variant used by the reference implementation lineage of the
    original method (and by torch.optim.SGD(nesterov=True)).
    """

    def __init__(self, momentum=0.9):
        if not (0.0 <= momentum < 1.0):
            raise ValueError("momentum must lie in [0,1)")
        self.momentum = momentum
        self.velocity = {}

    @torch.no_grad()
    def step(self, named_params, grads, lr):
        """Update parameters in place. grads maps name -> gradient tensor."""
        for name, grad in grads.items():
            if not torch.isfinite(grad).all():
                raise NonFiniteGradient("non-finite gradient in %r" % name)
        for name, param in named_params:
            grad = grads.get(name)
            if grad is None:
                continue
            vel = self.velocity.get(name)
            if vel is None:
                vel = torch.zeros_like(param)
            vel = self.momentum * vel + grad
            self.velocity[name] = vel
            param -= lr * (grad + self.momentum * vel)

    def state_dict(self):
        return {"momentum": self.momentum,
                "velocity": {k: v.clone() for k, v in self.velocity.items()}}

    def load_state_dict(self, state):
        self.momentum = state["momentum"]
        self.velocity = {k: v.clone() for k, v in state["velocity"].items()}
