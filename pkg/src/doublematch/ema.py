"""Exponential moving average of trainable parameters, used for evaluation.

shadow <- momentum * shadow + (1 - momentum) * params, per parameter.
Normalization running statistics are not averaged: they are copied verbatim
from the live model when the shadow is materialized for evaluation.
"""

import torch


class EmaState:
    def __init__(self, shadow, momentum):
        self.shadow = shadow      # name -> tensor, mirrors trainable params
        self.momentum = momentum

    def state_dict(self):
        return {"momentum": self.momentum,
                "shadow": {k: v.clone() for k, v in self.shadow.items()}}

    @staticmethod
    def from_state_dict(state):
        return EmaState({k: v.clone() for k, v in state["shadow"].items()},
                        state["momentum"])


def ema_init(named_params, momentum=0.999):
    """Shadow starts as a bitwise copy of the current parameters."""
    if not (0.0 <= momentum < 1.0):
        raise ValueError("momentum must lie in [0,1)")
    shadow = {name: p.detach().clone() for name, p in named_params}
    return EmaState(shadow, momentum)


@torch.no_grad()
def ema_update(state, named_params):
    m = state.momentum
    for name, p in named_params:
        if name not in state.shadow:
            raise KeyError("shadow has no parameter %r (shape drift?)" % name)
        shadow = state.shadow[name]
        if shadow.shape != p.shape:
            raise ValueError("shape drift for %r: %s vs %s" % (name, shadow.shape, p.shape))
        shadow.mul_(m).add_(p.detach(), alpha=1.0 - m)
    return state


@torch.no_grad()
def copy_shadow_to(state, bundle):
    """Write the shadow into a bundle's trainable parameters (in place).

    Normalization buffers are left as-is; callers evaluating an EMA snapshot
    should clone the live model first so its BN statistics carry over.
    """
    for name, p in bundle.named_trainable():
        p.copy_(state.shadow[name])
