"""Small numpy neural-network engine used by the KO/HiKO codecs.

Every node network is a four-layer perceptron ``in -> H -> H -> H -> out``
with SELU after each hidden layer and inverted dropout in training mode.
Encoder networks additionally own a scalar skip scale ``alpha`` that
multiplies a caller-supplied skip term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

N_LAYERS = 4


def selu(x: np.ndarray) -> np.ndarray:
    out = np.expm1(np.minimum(x, 0.0))
    out *= SELU_ALPHA
    out += np.maximum(x, 0.0)
    out *= SELU_LAMBDA
    return out


def selu_grad(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Derivative of SELU at ``x``; pass ``out = selu(x)`` to skip the exponential."""
    if out is None:
        out = selu(x)
    return np.where(x > 0, SELU_LAMBDA, out + SELU_LAMBDA * SELU_ALPHA)


def param_count(ell: int, hidden: int, with_alpha: bool = False, inputs: int = 2) -> int:
    """Trainable parameters of a node network mapping ``inputs * ell`` values to ``ell``.

    With the default two input blocks this is (2l+1)H + 2(H+1)H + (H+1)l,
    plus one when the network carries a skip scale.
    """
    if ell < 1 or hidden < 1:
        raise ValueError(f"ell and hidden must be positive, got {ell}, {hidden}")
    total = (inputs * ell + 1) * hidden + 2 * (hidden + 1) * hidden + (hidden + 1) * ell
    return total + int(with_alpha)


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: list[tuple[np.ndarray, np.ndarray]]
    post: list[np.ndarray]
    masks: list[np.ndarray | None]
    skip: np.ndarray | None
    version: int


class StaleCacheError(RuntimeError):
    pass


class Mlp:
    """Node network: three SELU hidden layers of width ``hidden``."""

    def __init__(
        self,
        in_dim: int,
        hidden: int,
        out_dim: int,
        with_alpha: bool = False,
        dropout: float = 0.1,
    ) -> None:
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim
        self.dropout = dropout
        self.training = False
        self._version = 0
        dims = [in_dim, hidden, hidden, hidden, out_dim]
        self.params: dict[str, np.ndarray] = {}
        for i in range(N_LAYERS):
            self.params[f"W{i}"] = np.zeros((dims[i], dims[i + 1]))
            self.params[f"b{i}"] = np.zeros(dims[i + 1])
        if with_alpha:
            self.params["alpha"] = np.ones(())

    @property
    def with_alpha(self) -> bool:
        return "alpha" in self.params

    def init_random(self, rng: np.random.Generator, zero_output: bool = False) -> Mlp:
        """Zero-mean Gaussian weights with std 1/sqrt(fan_in), zero biases, alpha = 1.

        With ``zero_output`` the last layer is left at zero, so the network
        outputs exactly zero while its hidden layers still carry signal.
        """
        for i in range(N_LAYERS):
            w = self.params[f"W{i}"]
            last = i == N_LAYERS - 1
            w[...] = 0.0 if (zero_output and last) else rng.standard_normal(w.shape) / math.sqrt(w.shape[0])
            self.params[f"b{i}"][...] = 0.0
        if self.with_alpha:
            self.params["alpha"][...] = 1.0
        self.touch()
        return self

    def touch(self) -> None:
        """Invalidate forward caches after an in-place parameter change."""
        self._version += 1

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def train(self, mode: bool = True) -> Mlp:
        self.training = mode
        return self

    def eval(self) -> Mlp:
        return self.train(False)

    def forward(
        self,
        x: np.ndarray,
        skip: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, ForwardCache]:
        """Apply the network to ``x`` of shape (batch, in_dim).

        When the network has ``alpha``, ``alpha * skip`` is added to the output.
        Training mode with a positive dropout rate needs ``rng``.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got shape {x.shape}")
        if self.with_alpha and skip is None:
            raise ValueError("network with a skip scale needs a skip term")
        drop = self.training and self.dropout > 0.0
        if drop and rng is None:
            raise ValueError("dropout in training mode needs an rng")
        pre, post, masks = [], [], []
        h = x
        for i in range(N_LAYERS - 1):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            act = selu(z)
            a = act
            mask = None
            if drop:
                keep = 1.0 - self.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            pre.append((z, act))
            post.append(a)
            masks.append(mask)
            h = a
        out = h @ self.params[f"W{N_LAYERS - 1}"] + self.params[f"b{N_LAYERS - 1}"]
        if self.with_alpha:
            out = out + self.params["alpha"] * skip
        return out, ForwardCache(x, pre, post, masks, skip, self._version)

    def backward(
        self, grad_out: np.ndarray, cache: ForwardCache
    ) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray | None]:
        """Reverse-mode pass for the forward call that produced ``cache``.

        Returns (parameter gradients, gradient w.r.t. x, gradient w.r.t. skip).
        """
        if cache.version != self._version:
            raise StaleCacheError("parameters changed since the forward pass")
        grads: dict[str, np.ndarray] = {}
        grad_skip = None
        if self.with_alpha:
            grads["alpha"] = np.asarray(np.sum(grad_out * cache.skip))
            grad_skip = self.params["alpha"] * grad_out
        last = N_LAYERS - 1
        h = cache.post[-1]
        grads[f"W{last}"] = h.reshape(-1, h.shape[-1]).T @ grad_out.reshape(-1, grad_out.shape[-1])
        grads[f"b{last}"] = grad_out.reshape(-1, grad_out.shape[-1]).sum(axis=0)
        g = grad_out @ self.params[f"W{last}"].T
        for i in range(N_LAYERS - 2, -1, -1):
            if cache.masks[i] is not None:
                g = g * cache.masks[i]
            z, act = cache.pre[i]
            g = g * selu_grad(z, act)
            h = cache.x if i == 0 else cache.post[i - 1]
            grads[f"W{i}"] = h.reshape(-1, h.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[f"b{i}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        return grads, g, grad_skip

    def __call__(self, x, skip=None, rng=None) -> np.ndarray:
        return self.forward(x, skip, rng)[0]


@dataclass
class Adam:
    """Bias-corrected Adam with per-parameter moment buffers and step counters.

    Parameters stepped with a zero learning rate are skipped entirely, so their
    values and moments stay untouched.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: dict[str, tuple[np.ndarray, np.ndarray, int]] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr) -> None:
        """Update ``params`` in place. ``lr`` is a float or a dict keyed like ``params``."""
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch for {name}: {p.shape} vs {g.shape}")
            rate = lr[name] if isinstance(lr, dict) else lr
            if rate == 0.0:
                continue
            m, v, t = self.state.get(name, (np.zeros_like(p), np.zeros_like(p), 0))
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= rate * m_hat / (np.sqrt(v_hat) + self.eps)
            self.state[name] = (m, v, t)


def adam_step(state: Adam, params, grads, lr) -> None:
    state.step(params, grads, lr)


@dataclass(frozen=True)
class LrSchedule:
    """One-cycle schedule: cosine rise to ``eta_max`` then cosine decay."""

    eta_max: float
    total_steps: int
    warm_fraction: float = 0.3
    start_div: float = 25.0
    final_div: float = 25.0 * 1e4

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")

    def lr_at(self, step: float) -> float:
        if not 0 <= step <= self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps}]")
        start = self.eta_max / self.start_div
        final = self.eta_max / self.final_div
        peak = self.warm_fraction * self.total_steps
        if step <= peak:
            return _cosine(start, self.eta_max, step / peak)
        return _cosine(self.eta_max, final, (step - peak) / (self.total_steps - peak))


def _cosine(begin: float, end: float, frac: float) -> float:
    return end + (begin - end) * 0.5 * (1.0 + math.cos(math.pi * frac))


def lr_at(schedule: LrSchedule, step: float) -> float:
    return schedule.lr_at(step)


def finite_difference_grads(
    loss: Callable[[], float], params: dict[str, np.ndarray], h: float = 1e-5, entries=None
) -> dict[str, np.ndarray]:
    """Central-difference gradients of ``loss()`` with respect to ``params``.

    ``params`` are perturbed in place and restored. ``entries`` optionally
    limits the check to given flat indices per parameter name.
    """
    out = {}
    for name, p in params.items():
        g = np.zeros(p.shape)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        idx = range(p.size) if entries is None else entries[name]
        for j in idx:
            old = flat_p[j]
            flat_p[j] = old + h
            up = loss()
            flat_p[j] = old - h
            down = loss()
            flat_p[j] = old
            flat_g[j] = (up - down) / (2.0 * h)
        out[name] = g
    return out


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-7) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
