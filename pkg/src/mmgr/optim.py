"""Losses, SGD with momentum / weight decay / global-norm clipping, and the
mini-batch training loop shared by every stream."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError, ShapeError
from .layers import Network, Param, _softmax_rows
from .tensor import axpy, l2_norm

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def cross_entropy_loss(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy on raw logits with a one-hot target.

    Returns the loss and its gradient with respect to the logits.
    """
    p = np.asarray(logits, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ShapeError(f"logits must be a vector of length >= 2, got shape {p.shape}")
    if not 0 <= label < p.size:
        raise ParameterError(f"label {label} out of range for {p.size} classes")
    m = p.max()
    lse = m + math.log(np.exp(p - m).sum())
    loss = lse - p[label]
    grad = np.exp(p - lse)
    grad[label] -= 1.0
    return float(loss), grad.astype(np.asarray(logits).dtype)


def cross_entropy_batch(logits: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over ``[B, l]`` logits; gradient already divided by B."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=int)
    B, l = logits.shape
    if np.any(labels < 0) or np.any(labels >= l):
        raise ParameterError(f"labels out of range for {l} classes")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(B), labels]))
    grad = np.exp(z - lse[:, None])
    grad[np.arange(B), labels] -= 1.0
    return loss, (grad / B).astype(logits.dtype)


def nll_batch_loss(probabilities: np.ndarray, labels: Sequence[int]) -> float:
    """Mean negative log-likelihood of the true labels under ``[B, l]`` probabilities."""
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None]
    labels = np.asarray(labels, dtype=int)
    if probs.shape[0] < 1 or probs.shape[0] != labels.size:
        raise ShapeError(f"{probs.shape[0]} probability rows for {labels.size} labels")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-4):
        raise ParameterError("probability rows must sum to 1 within 1e-4")
    picked = probs[np.arange(labels.size), labels]
    if np.any(picked < PROB_FLOOR):
        log.warning("%d true-label probabilities below %g clamped before log",
                    int(np.sum(picked < PROB_FLOOR)), PROB_FLOOR)
        picked = np.maximum(picked, PROB_FLOOR)
    return float(-np.mean(np.log(picked)))


def nll_batch(logits: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    """NLL of a softmax prediction layer on top of ``logits``; gradient w.r.t. logits."""
    probs = _softmax_rows(np.asarray(logits, dtype=np.float64))
    loss = nll_batch_loss(probs, labels)
    B = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(B), np.asarray(labels, dtype=int)] -= 1.0
    return loss, (grad / B).astype(np.asarray(logits).dtype)


LOSSES = {"ce": cross_entropy_batch, "nll": nll_batch}


def clip_gradient(grads: Sequence[np.ndarray], c: float) -> list[np.ndarray]:
    """Rescale all gradients together so their joint L2 norm is at most ``c`` (in place)."""
    if c <= 0:
        raise ParameterError(f"clip threshold must be positive, got {c}")
    total = math.sqrt(sum(l2_norm(g) ** 2 for g in grads))
    if total > c:
        scale = c / total
        for g in grads:
            g *= scale
    return list(grads)


@dataclass
class OptimizerState:
    """Velocities and hyperparameters of momentum SGD with step decay."""

    velocities: list[np.ndarray]
    momentum: float = 0.9
    base_lr: float = 0.1
    weight_decay: float = 0.0
    clip: float = 10.0
    decay_factor: float = 0.1
    step_interval: int = 1500
    iteration: int = 0
    lr: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.base_lr < 0 or self.weight_decay < 0 or self.clip <= 0:
            raise ParameterError("need base_lr >= 0, weight_decay >= 0, clip > 0")
        if self.step_interval < 1:
            raise ParameterError("step interval must be >= 1")
        if self.lr is None:
            self.lr = self.base_lr

    @classmethod
    def for_params(cls, params: Sequence[Param], **kw) -> "OptimizerState":
        return cls([np.zeros_like(p.value) for p in params], **kw)


def lr_schedule(state: OptimizerState, iteration: int) -> float:
    """Step decay: ``base_lr * decay_factor ** floor(iteration / step_interval)``."""
    if iteration < 0:
        raise ParameterError("iteration must be >= 0")
    return state.base_lr * state.decay_factor ** (iteration // state.step_interval)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             state: OptimizerState, decay_mask: Sequence[bool] | None = None) -> None:
    """One momentum-SGD update, in place.

    ``v <- mu*v - lr*g`` then ``theta <- theta + v - wd*lr*theta_prev``; the decay
    term is skipped for entries whose ``decay_mask`` is False.
    """
    if not (len(params) == len(grads) == len(state.velocities)):
        raise ShapeError("params, grads and velocities differ in count")
    if decay_mask is None:
        decay_mask = [True] * len(params)
    lr = state.lr
    for theta, g, v, decay in zip(params, grads, state.velocities, decay_mask):
        if not (theta.shape == g.shape == v.shape):
            raise ShapeError(f"shape mismatch: param {theta.shape}, grad {g.shape}, velocity {v.shape}")
        v *= state.momentum
        axpy(v, g, -lr)
        if decay and state.weight_decay:
            axpy(theta, theta, -state.weight_decay * lr)
        theta += v
    state.iteration += 1


class SGD:
    """Binds an :class:`OptimizerState` to a network's parameters."""

    def __init__(self, params: Sequence[Param], lr=0.1, momentum=0.9, weight_decay=0.0,
                 clip=10.0, step_interval=1500, decay_factor=0.1):
        self.params = list(params)
        self.state = OptimizerState.for_params(
            self.params, momentum=momentum, base_lr=lr, weight_decay=weight_decay, clip=clip,
            step_interval=step_interval, decay_factor=decay_factor)

    def step(self) -> None:
        """Clip the accumulated (batch-averaged) gradients and apply one update."""
        grads = [p.grad for p in self.params]
        clip_gradient(grads, self.state.clip)
        self.state.lr = lr_schedule(self.state, self.state.iteration)
        sgd_step([p.value for p in self.params], grads, self.state,
                 [p.decay for p in self.params])

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"opt.v.{p.name}": v for p, v in zip(self.params, self.state.velocities)}
        out["opt.iteration"] = np.array([self.state.iteration], dtype=np.float32)
        return out

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        for p, v in zip(self.params, self.state.velocities):
            key = f"opt.v.{p.name}"
            if key in tensors:
                v[...] = tensors[key]
        if "opt.iteration" in tensors:
            self.state.iteration = int(tensors["opt.iteration"][0])
            self.state.lr = lr_schedule(self.state, self.state.iteration)


@dataclass
class EpochStats:
    loss: float
    accuracy: float
    lr: float
    batches: int


def format_log_line(epoch: int, stats: EpochStats) -> str:
    return f"epoch={epoch} loss={stats.loss:.6f} acc={stats.accuracy:.6f} lr={stats.lr:.6g}"


def train_epoch(net: Network, dataset: Sequence[tuple[np.ndarray, int]], optimizer: SGD,
                batch_size: int = 8, rng: np.random.Generator | None = None,
                loss: str = "ce") -> EpochStats:
    """One pass over ``dataset`` (a sequence of ``(input, label)`` pairs).

    Samples are visited in a permutation drawn from ``rng`` (dataset order if
    ``rng`` is None). Statistics are computed from the training-mode forward
    passes.
    """
    n = len(dataset)
    if n == 0:
        raise ParameterError("dataset is empty")
    if batch_size < 1:
        raise ParameterError("batch size must be >= 1")
    loss_fn = LOSSES[loss]
    order = rng.permutation(n) if rng is not None else np.arange(n)
    total_loss = 0.0
    correct = 0
    batches = 0
    for b, start in enumerate(range(0, n, batch_size)):
        idx = order[start:start + batch_size]
        x = np.stack([dataset[i][0] for i in idx])
        y = np.array([dataset[i][1] for i in idx])
        try:
            batch_loss, correct_b = train_batch(net, x, y, optimizer, loss_fn)
        except ShapeError as exc:
            raise ShapeError(f"batch {b}: {exc}") from None
        total_loss += batch_loss * len(idx)
        correct += correct_b
        batches += 1
    return EpochStats(total_loss / n, correct / n, optimizer.state.lr, batches)


def train_batch(net: Network, x: np.ndarray, y: np.ndarray, optimizer: SGD,
                loss_fn=cross_entropy_batch) -> tuple[float, int]:
    """Forward, loss, backward, clip and step on one mini-batch."""
    net.zero_grad()
    logits = net.forward(x, train=True)
    batch_loss, grad = loss_fn(logits, y)
    net.backward(grad, input_grad=False)
    optimizer.step()
    return batch_loss, int(np.sum(logits.argmax(axis=1) == y))


def evaluate(net: Network, inputs: Iterable[np.ndarray], batch_size: int = 16) -> np.ndarray:
    """Eval-mode logits for a sequence of inputs, batched."""
    inputs = list(inputs)
    out = []
    for start in range(0, len(inputs), batch_size):
        out.append(net.forward(np.stack(inputs[start:start + batch_size]), train=False))
    return np.concatenate(out) if out else np.zeros((0, net.config.num_classes))
