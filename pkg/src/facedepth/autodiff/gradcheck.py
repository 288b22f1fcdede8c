"""Central finite-difference gradient checks on the 64-bit path."""

from __future__ import annotations

from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Mapping[str, np.ndarray],
    params: Optional[Mapping[str, Tensor]] = None,
    h: float = 1e-3,
    seed: int = 0,
) -> Dict[str, float]:
    """Compare backprop against finite differences for ``fn(**tensors)``.

    ``inputs`` are cast to float64 tensors and passed to ``fn`` by name.
    ``params`` are float64 tensors ``fn`` closes over (e.g. the parameters of
    a module cast with ``astype(np.float64)``); they are checked too. A
    non-scalar output is reduced through a fixed random projection. Returns
    the relative error for every checked array.
    """
    tensors = {k: Tensor(v, requires_grad=True, dtype=np.float64) for k, v in inputs.items()}
    checked = dict(tensors)
    for k, p in (params or {}).items():
        if p.dtype != np.float64:
            raise TypeError(f"parameter {k!r} must be float64 for the gradient check, got {p.dtype}")
        checked[k] = p
    probe = fn(**tensors)
    proj = np.random.default_rng([seed, 7919]).standard_normal(probe.shape) if probe.size > 1 else np.ones(probe.shape)
    proj_t = Tensor(proj, dtype=np.float64)

    def scalar_loss() -> Tensor:
        return (fn(**tensors) * proj_t).sum()

    for t in checked.values():
        t.grad = None
    scalar_loss().backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in checked.items()}

    def value() -> float:
        return float(scalar_loss().data)

    return {k: relative_error(analytic[k], numerical_gradient(value, t.data, h)) for k, t in checked.items()}


def check_directional(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    n_directions: int = 3,
    h: float = 1e-4,
    seed: int = 0,
) -> Dict[str, float]:
    """Directional-derivative check for tensors too large to difference element by element.

    For each float64 parameter, compares ``<grad, v>`` with the central
    difference of the scalar ``fn()`` along ``n_directions`` random unit
    directions ``v``. Returns the worst relative error per parameter.
    """
    for k, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"parameter {k!r} must be float64 for the gradient check, got {p.dtype}")
    for p in params.values():
        p.grad = None
    out = fn()
    if out.size != 1:
        raise ValueError("directional checks need a scalar function")
    out.backward()
    rng = np.random.default_rng([seed, 104729])
    errors = {}
    for k, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = 0.0
        for _ in range(n_directions):
            v = rng.standard_normal(p.shape)
            v /= np.linalg.norm(v)
            base = p.data.copy()
            p.data[...] = base + h * v
            fp = float(fn().data)
            p.data[...] = base - h * v
            fm = float(fn().data)
            p.data[...] = base
            numeric = (fp - fm) / (2.0 * h)
            analytic = float(np.sum(grad * v))
            worst = max(worst, relative_error(np.array([analytic]), np.array([numeric])))
        errors[k] = worst
    return errors
