"""Parameter containers and the layer types the networks are built from."""

from __future__ import annotations

import contextlib
import hashlib
from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    """Minimal module tree: named parameters, named buffers, train/eval mode."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()
        self.training = True
        # when False, batch-norm layers keep their running statistics fixed
        self.track_stats = True

    def __setattr__(self, name, value):
        if isinstance(value, Module) and name != "_children":
            self.__dict__.setdefault("_children", OrderedDict())[name] = value
        object.__setattr__(self, name, value)

    def add_param(self, name: str, shape: tuple, fill: float = 0.0) -> Tensor:
        p = Tensor(np.full(shape, fill, dtype=np.float32), requires_grad=True)
        self._params[name] = p
        object.__setattr__(self, name, p)
        return p

    def add_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters and buffers by dotted name (views, not copies)."""
        out = OrderedDict((k, p.data) for k, p in self.named_parameters())
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for k, target in own.items():
            src = np.asarray(state[k])
            if src.shape != target.shape:
                raise ValueError(f"{k}: stored shape {src.shape} != model shape {target.shape}")
            target[...] = src

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer to ``dtype`` in place (used by the gradient checker)."""
        for m in self.modules():
            for name, p in m._params.items():
                p.data = p.data.astype(dtype)
                p.grad = None
            for name, b in list(m._buffers.items()):
                m.add_buffer(name, b.astype(dtype))
        return self

    def digest(self) -> str:
        """SHA-256 over every parameter and buffer, in name order."""
        h = hashlib.sha256()
        for k, arr in self.state_dict().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


@contextlib.contextmanager
def frozen(module: Module):
    """Hold ``module``'s parameters and running statistics fixed inside the block.

    Gradients still flow *through* the module to its inputs; its own parameters
    are not tracked and batch-norm layers do not update their buffers.
    """
    saved = [(p, p.requires_grad) for p in module.parameters()]
    saved_track = [(m, m.track_stats) for m in module.modules()]
    for p, _ in saved:
        p.requires_grad = False
    for m, _ in saved_track:
        m.track_stats = False
    try:
        yield module
    finally:
        for p, flag in saved:
            p.requires_grad = flag
        for m, flag in saved_track:
            m.track_stats = flag


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.add_param("weight", (cout, cin, k, k))
        self.add_param("bias", (cout,))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0, output_padding: int = 0):
        super().__init__()
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        self.add_param("weight", (cin, cout, k, k))
        self.add_param("bias", (cout,))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.add_param("gamma", (channels,), 1.0)
        self.add_param("beta", (channels,), 0.0)
        self.add_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.add_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            eps=self.eps,
            momentum=self.momentum,
            update_stats=self.track_stats,
        )


class Linear(Module):
    def __init__(self, fin: int, fout: int):
        super().__init__()
        self.add_param("weight", (fin, fout))
        self.add_param("bias", (fout,))

    def forward(self, x: Tensor) -> Tensor:
        return F.fully_connected(x, self.weight, self.bias)
