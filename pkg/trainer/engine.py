"""Epoch loop: Stage-I minibatch momentum steps, Stage-II probing and learning-rate revision."""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from config import (
    GRADCHECK_STEP,
    PROBE_SEED,
    PROBE_THREADS,
    RMSGD_ALPHA,
    RMSGD_BETA,
    RMSGD_ETA0,
    RMSGD_ZETA,
)
from errors import ConfigError, DegenerateDenominator, DivergedTraining, EmptyNetwork
from evbmf import factorize
from linalg import Matrix, Tensor4D, UnfoldMode, unfold
from optim.diagnostics import theorem1_lower_bound
from optim.rmsgd import RMSGD, MomentumSGD, assign_layer_groups, vanilla_rank_lr
from probes.metrics import QualityReport, measure_network, stable_rank
from trainer.datasets import make_dataset
from trainer.network import Network

logger = logging.getLogger(__name__)


class OptimizerKind(str, Enum):
    RMSGD = "rmsgd"
    SGD = "sgd"


@dataclass
class DatasetSpec:
    kind: str = "two_moons"
    params: Dict = field(default_factory=dict)


_NUMERIC_FIELDS = {
    "eval_fraction": float, "lr": float, "alpha": float, "beta": float,
    "zeta": float, "eta0": float, "seed": int, "threads": int, "min_layer_dim": int,
}
_STRUCTURED_FIELDS = ("epochs", "batch_size", "optimizer", "dataset")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    optimizer: OptimizerKind = OptimizerKind.RMSGD
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    eval_fraction: float = 0.2
    lr: float = RMSGD_ETA0  # fixed step size of the SGD baseline
    alpha: float = RMSGD_ALPHA
    beta: float = RMSGD_BETA
    zeta: float = RMSGD_ZETA
    eta0: float = RMSGD_ETA0
    seed: int = PROBE_SEED
    threads: int = PROBE_THREADS
    min_layer_dim: int = 2  # layers whose smaller side is below this are not probed

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = sorted(k for k in d if k not in _NUMERIC_FIELDS and k not in _STRUCTURED_FIELDS)
        if unknown:
            raise ConfigError(f"train.{unknown[0]}", "is not a recognised setting")
        try:
            optimizer = OptimizerKind(str(d.pop("optimizer", OptimizerKind.RMSGD.value)).lower())
        except ValueError as e:
            raise ConfigError("train.optimizer", "must be 'rmsgd' or 'sgd'") from e
        dataset = d.pop("dataset", {})
        for key in ("epochs", "batch_size"):
            if key not in d:
                raise ConfigError(f"train.{key}", "is required")
        try:
            cfg = cls(
                epochs=int(d.pop("epochs")),
                batch_size=int(d.pop("batch_size")),
                optimizer=optimizer,
                dataset=DatasetSpec(kind=dataset.get("kind", "two_moons"), params=dict(dataset.get("params", {}))),
                **{k: _NUMERIC_FIELDS[k](v) for k, v in d.items()},
            )
        except (TypeError, ValueError) as e:
            raise ConfigError("train", str(e)) from e
        cfg.validate()
        return cfg

    def to_dict(self):
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "optimizer": self.optimizer.value,
            "dataset": {"kind": self.dataset.kind, "params": dict(self.dataset.params)},
            "eval_fraction": self.eval_fraction, "lr": self.lr, "alpha": self.alpha, "beta": self.beta,
            "zeta": self.zeta, "eta0": self.eta0, "seed": self.seed, "threads": self.threads,
            "min_layer_dim": self.min_layer_dim,
        }

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs", f"must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", f"must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ConfigError("train.eval_fraction", f"must be in [0, 1), got {self.eval_fraction}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError("train.alpha", f"must be in [0, 1), got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("train.beta", f"must be in [0, 1), got {self.beta}")
        if self.zeta < 0.0:
            raise ConfigError("train.zeta", f"must be >= 0, got {self.zeta}")
        if self.eta0 <= 0.0:
            raise ConfigError("train.eta0", f"must be > 0, got {self.eta0}")
        if self.lr <= 0.0:
            raise ConfigError("train.lr", f"must be > 0, got {self.lr}")
        if self.threads < 1:
            raise ConfigError("train.threads", f"must be >= 1, got {self.threads}")
        if self.min_layer_dim < 2:
            raise ConfigError("train.min_layer_dim", f"must be >= 2, got {self.min_layer_dim}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    quality: QualityReport
    learning_rates: List[float]
    raw_learning_rates: List[float]
    clamp_count: int = 0
    lr_lower_bounds: List[Optional[float]] = field(default_factory=list)

    @property
    def gen_gap(self):
        return self.train_accuracy - self.test_accuracy


@dataclass
class TrainingResult:
    records: List[EpochRecord]
    network: Network
    optimizer: MomentumSGD
    layer_names: List[str]


def build_optimizer(network, cfg):
    groups = assign_layer_groups(list(network.params), network.weight_names)
    if cfg.optimizer is OptimizerKind.RMSGD:
        return RMSGD(network.params, groups, eta0=cfg.eta0, alpha=cfg.alpha, beta=cfg.beta, zeta=cfg.zeta)
    return MomentumSGD(network.params, groups, lr=cfg.lr, alpha=cfg.alpha)


def _lower_bounds(start_weights, accumulated):
    bounds = []
    for name, w in start_weights.items():
        g = accumulated[name]
        if w.ndim == 4:
            w_mat = unfold(Tensor4D(w), UnfoldMode.OUTPUT_CHANNEL)
            g_mat = unfold(Tensor4D(g), UnfoldMode.OUTPUT_CHANNEL)
        else:
            w_mat, g_mat = Matrix.from_array(w), Matrix.from_array(g)
        try:
            bounds.append(theorem1_lower_bound(w_mat, g_mat))
        except DegenerateDenominator as e:
            logger.debug("%s: lower bound not applicable (%s)", name, e)
            bounds.append(None)
    return bounds


def stream_training(spec, cfg, dataset=None, callback_handler=None):
    """Run `cfg.epochs` epochs, yielding one event per epoch and a final `done` event."""
    cfg.validate()
    network = Network(spec)
    if dataset is None:
        dataset = make_dataset(cfg.dataset.kind, cfg.dataset.params, seed=cfg.seed)
    if tuple(dataset.input_shape) != tuple(spec.input_shape):
        raise ConfigError("network.input_shape", f"dataset provides {dataset.input_shape}, network expects {spec.input_shape}")
    if spec.num_outputs != dataset.num_classes:
        raise ConfigError("network.layers", f"head has {spec.num_outputs} outputs for {dataset.num_classes} classes")
    train_set, test_set = dataset.split(cfg.eval_fraction, seed=cfg.seed)
    if len(train_set) == 0:
        raise ConfigError("dataset", "training split is empty")

    optimizer = build_optimizer(network, cfg)
    groups = optimizer.state.groups
    layer_names = [g.weight_ref for g in groups]
    rng = np.random.default_rng(cfg.seed)
    records = []

    for epoch in range(1, cfg.epochs + 1):
        # Stage-I
        start_weights = {name: network.params[name].copy() for name in layer_names}
        accumulated = {name: np.zeros_like(network.params[name]) for name in layer_names}
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads, _ = network.loss_and_grads(train_set.x[batch], train_set.y[batch])
            if not math.isfinite(loss):
                raise DivergedTraining(f"loss became {loss} at epoch {epoch}")
            optimizer.step(grads)
            for name in layer_names:
                accumulated[name] += grads[name]
            losses.append(loss)

        # Stage-II
        weights = {name: network.params[name] for name in layer_names}
        try:
            report = measure_network(weights, epoch=epoch, threads=cfg.threads, min_dim=cfg.min_layer_dim)
        except EmptyNetwork:
            logger.warning("epoch %d: no layer could be measured", epoch)
            report = QualityReport(epoch=epoch, per_layer=[], network_quality=0.0)
        measured = {lm.layer_index: lm.stable_rank for lm in report.per_layer}
        previous = optimizer.state.prev_stable_rank
        ranks = [measured.get(g.layer_index, previous[i]) for i, g in enumerate(groups)]
        learning_rates = optimizer.end_epoch(ranks)

        train_loss = float(np.mean(losses))
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            train_accuracy=network.accuracy(train_set.x, train_set.y),
            test_accuracy=network.accuracy(test_set.x, test_set.y),
            quality=report,
            learning_rates=list(learning_rates),
            raw_learning_rates=list(optimizer.state.raw_lr_history[-1]),
            clamp_count=optimizer.state.clamp_count,
            lr_lower_bounds=_lower_bounds(start_weights, accumulated),
        )
        logger.info("epoch %d: loss=%.4f train_acc=%.4f test_acc=%.4f Q=%.4f", epoch, record.train_loss,
                    record.train_accuracy, record.test_accuracy, report.network_quality)
        records.append(record)
        if callback_handler is not None:
            callback_handler.on_epoch_end(record)
        yield {"type": "epoch", "record": record}

    yield {"type": "done", "result": TrainingResult(records, network, optimizer, layer_names)}


def run_training(spec, cfg, dataset=None, callback_handler=None):
    result = None
    for event in stream_training(spec, cfg, dataset=dataset, callback_handler=callback_handler):
        if event["type"] == "done":
            result = event["result"]
    return result


def train(spec, cfg, dataset=None):
    return run_training(spec, cfg, dataset=dataset).records


# --- Gradient check ---
def _relative_error(a, b):
    num = np.linalg.norm(a - b)
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den == 0.0 else float(num / den)


def gradcheck(spec, x=None, y=None, n_samples=16, step=GRADCHECK_STEP, seed=0):
    """Max relative error between analytic and central-difference gradients over all parameters."""
    network = Network(spec)
    rng = np.random.default_rng(seed)
    if x is None:
        x = rng.standard_normal((n_samples,) + tuple(spec.input_shape))
    if y is None:
        y = np.arange(len(x)) % spec.num_outputs
    _, analytic, _ = network.loss_and_grads(x, y)

    worst = 0.0
    for name, param in network.params.items():
        numeric = np.zeros_like(param)
        flat, grad_flat = param.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = network.loss(x, y)
            flat[i] = original - step
            minus = network.loss(x, y)
            flat[i] = original
            grad_flat[i] = (plus - minus) / (2.0 * step)
        error = _relative_error(analytic[name], numeric)
        logger.debug("gradcheck %s: %.3e", name, error)
        worst = max(worst, error)
    return worst


# --- Rank-schedule experiment ---
@dataclass
class RankScheduleTrace:
    stable_ranks: List[float]
    learning_rates: List[float]
    estimated_ranks: List[int]
    # Monotonicity lower bound on the step size per epoch; None when W is zero.
    lower_bounds: List[Optional[float]] = field(default_factory=list)

    @property
    def non_decreasing_fraction(self):
        s = np.asarray(self.stable_ranks)
        steps = np.diff(s)
        return float(np.mean(steps >= -1e-12)) if steps.size else 1.0


def _least_squares_problem(rng, n_samples, in_dim, out_dim, spectrum, curvature):
    """Design with input covariance R diag(lam) R' and a target R M sharing its eigenbasis."""
    k = len(spectrum)
    lam = np.full(in_dim, float(np.max(curvature)))
    lam[:k] = curvature
    q, _ = np.linalg.qr(rng.standard_normal((n_samples, in_dim)))
    r, _ = np.linalg.qr(rng.standard_normal((in_dim, in_dim)))
    x = np.sqrt(n_samples) * (q * np.sqrt(lam)) @ r.T
    f, _ = np.linalg.qr(rng.standard_normal((out_dim, k)))
    target = r[:, :k] @ (np.asarray(spectrum, dtype=np.float64)[:, None] * f.T)
    return x, x @ target, lam


def fit_rank_schedule(epochs=50, n_samples=256, in_dim=32, out_dim=16, spectrum=(4.0, 3.0, 2.0, 1.0),
                      curvature=(1.0, 0.3, 0.1, 0.03), steps_per_epoch=8, eta0=RMSGD_ETA0, zeta=20.0,
                      lr_max=None, seed=0):
    """Full-batch gradient descent on a noise-free least-squares layer, step size set from stable-rank gain.

    W starts at zero. Each epoch runs `steps_per_epoch` steps at the current rate,
    probes W with EVBMF and sets the next rate to zeta * ds clipped to
    [eta0, lr_max]; lr_max defaults to half the inverse of the largest curvature.
    Directions with low curvature are learned last, so the singular values of W
    fill in from the top and the stable rank grows epoch over epoch.
    """
    if n_samples < in_dim:
        raise ValueError(f"need n_samples >= in_dim, got {n_samples} < {in_dim}")
    if len(spectrum) != len(curvature) or len(spectrum) > min(in_dim, out_dim):
        raise ValueError("spectrum and curvature need one entry per target direction, at most min(in_dim, out_dim)")
    rng = np.random.default_rng(seed)
    x, y, lam = _least_squares_problem(rng, n_samples, in_dim, out_dim, spectrum, curvature)
    if lr_max is None:
        lr_max = 0.5 / float(np.max(lam))
    w = np.zeros((in_dim, out_dim))

    def probe(weights):
        f = factorize(Matrix.from_array(weights))
        return stable_rank(f), f.estimated_rank

    s_prev, r0 = probe(w)
    trace = RankScheduleTrace(stable_ranks=[s_prev], learning_rates=[eta0], estimated_ranks=[r0])
    lr = eta0
    for epoch in range(1, epochs + 1):
        start = w.copy()
        accumulated = np.zeros_like(w)
        for _ in range(steps_per_epoch):
            grad = x.T @ (x @ w - y) / n_samples
            accumulated += grad
            w = w - lr * grad
        try:
            bound = theorem1_lower_bound(Matrix.from_array(start), Matrix.from_array(accumulated))
        except DegenerateDenominator as e:
            logger.debug("epoch %d: %s", epoch, e)
            bound = None
        s_curr, r = probe(w)
        lr = float(np.clip(vanilla_rank_lr(s_prev, s_curr, zeta), eta0, lr_max))
        logger.debug("epoch %d: s=%.6f rank=%d next lr=%.4g", epoch, s_curr, r, lr)
        trace.stable_ranks.append(s_curr)
        trace.learning_rates.append(lr)
        trace.estimated_ranks.append(r)
        trace.lower_bounds.append(bound)
        s_prev = s_curr
    return trace


__all__ = [
    "DatasetSpec", "EpochRecord", "OptimizerKind", "TrainConfig", "TrainingResult",
    "build_optimizer", "fit_rank_schedule", "gradcheck", "run_training", "stream_training", "train",
]
