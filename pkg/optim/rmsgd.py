"""Momentum SGD with per-layer learning rates driven by stable-rank deltas (RMSGD).

Stage-I (every minibatch): v <- alpha*v - eta_l*g ; w <- w + v
Stage-II (epoch boundary):  eta_l <- beta*eta_l + zeta*(s_l(t) - s_l(t-1))
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from config import LR_FLOOR, RMSGD_ALPHA, RMSGD_BETA, RMSGD_ETA0, RMSGD_ZETA
from errors import LayerCountMismatch, NonFiniteGradient

logger = logging.getLogger(__name__)


@dataclass
class LayerGroup:
    layer_index: int
    weight_ref: str
    attached_params: List[str] = field(default_factory=list)

    @property
    def params(self):
        return [self.weight_ref, *self.attached_params]


def assign_layer_groups(param_names, weight_names):
    """Anchor one group per weight; other parameters join the nearest preceding weight.

    Parameters listed before the first weight join the first group.
    """
    weight_names = set(weight_names)
    groups, orphans = [], []
    for name in param_names:
        if name in weight_names:
            groups.append(LayerGroup(layer_index=len(groups) + 1, weight_ref=name))
            if orphans and len(groups) == 1:
                groups[0].attached_params.extend(orphans)
                orphans = []
        elif groups:
            groups[-1].attached_params.append(name)
        else:
            orphans.append(name)
    if not groups:
        raise ValueError("at least one weight-bearing parameter is required")
    return groups


@dataclass
class OptimizerState:
    per_layer_lr: List[float]
    velocity: Dict[str, np.ndarray]
    prev_stable_rank: List[float]
    groups: List[LayerGroup]
    alpha: float = RMSGD_ALPHA
    beta: float = RMSGD_BETA
    zeta: float = RMSGD_ZETA
    eta0: float = RMSGD_ETA0
    epoch: int = 0
    clamp_count: int = 0
    lr_history: List[List[float]] = field(default_factory=list)
    raw_lr_history: List[List[float]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.zeta < 0.0:
            raise ValueError(f"zeta must be >= 0, got {self.zeta}")
        if self.eta0 <= 0.0 or any(lr <= 0.0 for lr in self.per_layer_lr):
            raise ValueError("learning rates must be positive")
        if len(self.per_layer_lr) != len(self.groups) or len(self.prev_stable_rank) != len(self.groups):
            raise LayerCountMismatch("one learning rate and one stable rank per layer group are required")
        if not self.lr_history:
            self.lr_history.append(list(self.per_layer_lr))
            self.raw_lr_history.append(list(self.per_layer_lr))

    @classmethod
    def initial(cls, params, groups, alpha=RMSGD_ALPHA, beta=RMSGD_BETA, zeta=RMSGD_ZETA, eta0=RMSGD_ETA0):
        return cls(
            per_layer_lr=[eta0] * len(groups),
            velocity={name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()},
            prev_stable_rank=[0.0] * len(groups),
            groups=groups,
            alpha=alpha,
            beta=beta,
            zeta=zeta,
            eta0=eta0,
        )


def sgd_step(state, params, grads):
    """One momentum update of `params` in place, each with its group's learning rate."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape {np.shape(g)} does not match {name!r} {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name!r}")

    for group, lr in zip(state.groups, state.per_layer_lr):
        for name in group.params:
            if name not in grads:
                continue
            v = state.alpha * state.velocity[name] - lr * grads[name]
            state.velocity[name] = v
            params[name] += v
    return state


def epoch_lr_update(state, current_stable_ranks):
    """Stage-II learning-rate revision; returns the new per-layer rates."""
    if len(current_stable_ranks) != len(state.groups):
        raise LayerCountMismatch(
            f"got {len(current_stable_ranks)} stable ranks for {len(state.groups)} layer groups")
    new_lr, raw_lr = [], []
    for group, lr, prev_s, curr_s in zip(state.groups, state.per_layer_lr,
                                         state.prev_stable_rank, current_stable_ranks):
        raw = state.beta * lr + vanilla_rank_lr(prev_s, curr_s, state.zeta)
        raw_lr.append(raw)
        if raw <= 0.0:
            logger.warning("layer %d (%s): learning rate %.3g is non-positive at epoch %d; clamped to %g",
                           group.layer_index, group.weight_ref, raw, state.epoch + 1, LR_FLOOR)
            state.clamp_count += 1
            raw = LR_FLOOR
        new_lr.append(raw)
    state.per_layer_lr = new_lr
    state.prev_stable_rank = [float(s) for s in current_stable_ranks]
    state.epoch += 1
    state.lr_history.append(list(new_lr))
    state.raw_lr_history.append(raw_lr)
    return new_lr


def vanilla_rank_lr(prev_s, curr_s, zeta):
    """Momentum-free step size: zeta * (s(t) - s(t-1))."""
    return zeta * (curr_s - prev_s)


def closed_form_lr(eta0, beta, zeta, deltas):
    """eta(T) = beta^T * eta0 + zeta * sum_t beta^(T-t) * delta_s(t)."""
    deltas = np.asarray(deltas, dtype=np.float64)
    T = deltas.size
    powers = beta ** np.arange(T - 1, -1, -1, dtype=np.float64)
    return float(beta ** T * eta0 + zeta * np.sum(powers * deltas))


# --- Optimizers ---
class MomentumSGD:
    """Fixed learning-rate momentum SGD; the baseline RMSGD is compared against."""

    adaptive = False

    def __init__(self, params, groups, lr=RMSGD_ETA0, alpha=RMSGD_ALPHA):
        self.params = params
        self.state = OptimizerState.initial(params, groups, alpha=alpha, beta=0.0, zeta=0.0, eta0=lr)

    @property
    def learning_rates(self):
        return list(self.state.per_layer_lr)

    def step(self, grads):
        sgd_step(self.state, self.params, grads)

    def end_epoch(self, stable_ranks):
        if len(stable_ranks) != len(self.state.groups):
            raise LayerCountMismatch(
                f"got {len(stable_ranks)} stable ranks for {len(self.state.groups)} layer groups")
        self.state.prev_stable_rank = [float(s) for s in stable_ranks]
        self.state.epoch += 1
        self.state.lr_history.append(list(self.state.per_layer_lr))
        self.state.raw_lr_history.append(list(self.state.per_layer_lr))
        return self.learning_rates


class RMSGD(MomentumSGD):
    adaptive = True

    def __init__(self, params, groups, eta0=RMSGD_ETA0, alpha=RMSGD_ALPHA, beta=RMSGD_BETA, zeta=RMSGD_ZETA):
        self.params = params
        self.state = OptimizerState.initial(params, groups, alpha=alpha, beta=beta, zeta=zeta, eta0=eta0)

    def end_epoch(self, stable_ranks):
        return epoch_lr_update(self.state, stable_ranks)
