"""Adam with the exponential step annealing used for the parser."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, TrainingError


def annealed_lr(lr0, t, base=0.75, denom=5000):
    """Learning rate after ``t`` updates: ``lr0 * base ** (t / denom)``."""
    return lr0 * base ** (t / denom)


@dataclass
class AdamState:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    t: int = 0


def adam_update(params, grads, state, hyper):
    """Apply one bias-corrected Adam step in place.

    ``params`` and ``grads`` map names to arrays.  ``hyper`` supplies
    ``learning_rate``, ``beta1``, ``beta2``, ``epsilon``, ``anneal_base``
    and ``anneal_denom``.  The annealed rate uses the step counter before
    it is incremented, so the very first update runs at the base rate.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name!r}", step=state.t)
    lr = annealed_lr(hyper.learning_rate, state.t, hyper.anneal_base, hyper.anneal_denom)
    b1, b2, eps = hyper.beta1, hyper.beta2, hyper.epsilon
    step = state.t + 1
    corr1 = 1.0 - b1 ** step
    corr2 = 1.0 - b2 ** step
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.first.get(name)
        if m is None:
            m = state.first[name] = np.zeros_like(p)
            state.second[name] = np.zeros_like(p)
        v = state.second[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    state.t = step
    return params, state
