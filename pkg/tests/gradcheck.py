"""Central finite-difference checks shared by the gradient tests."""

from collections.abc import Callable, Sequence

import numpy as np

from steersep.tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / (||a|| + ||n||); zero when both are zero."""
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numerical_gradient(fn: Callable[[], Tensor], target: Tensor, h: float = 1e-5) -> np.ndarray:
    """Perturb each entry of ``target`` in place and difference the scalar ``fn()``."""
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            plus = fn().item()
            flat[i] = saved - h
            minus = fn().item()
            flat[i] = saved
            out[i] = (plus - minus) / (2 * h)
    return grad


def check_gradients(
    fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5
) -> dict[int, float]:
    """Compare backward() against central differences for every tensor.

    Args:
        fn: Builds a scalar loss from the tensors; must be re-evaluable.
        tensors: Leaf tensors with ``requires_grad`` set.
        h: Finite-difference step.

    Returns:
        Relative error per tensor position.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    errors = {}
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors[i] = relative_error(analytic, numerical_gradient(fn, t, h))
    return errors
