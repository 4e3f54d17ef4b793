"""Adam with decoupled weight decay, and global L2 gradient clipping."""

from collections.abc import Iterable, Sequence

import numpy as np

from .nn import Parameter


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``.

    Returns:
        The norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= g.dtype.type(scale)
    return total


class Adam:
    """Adam (beta1=0.9, beta2=0.999) with weight decay applied directly to the weights.

    Parameters without a gradient are skipped entirely, so branches that did
    not run (or are frozen) keep their values bit for bit.
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr, self.weight_decay, self.eps = lr, weight_decay, eps
        self.beta1, self.beta2 = betas
        self.steps = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, trainable: set[str] | None = None) -> None:
        self.steps += 1
        bias1 = 1 - self.beta1**self.steps
        bias2 = 1 - self.beta2**self.steps
        for p in self.params:
            if p.grad is None or (trainable is not None and p.name not in trainable):
                continue
            g = p.grad
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps) + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"adam.m.{k}": v for k, v in self.m.items()}
        state.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], steps: int) -> None:
        for name in self.m:
            self.m[name] = np.array(state[f"adam.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(state[f"adam.v.{name}"], dtype=self.v[name].dtype)
        self.steps = steps
