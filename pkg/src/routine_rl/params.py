"""Named parameter collections, Adam, polyak averaging and gradient checking."""

from __future__ import annotations

from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ConfigError, NumericalError


class ParameterSet:
    """Named trainable tensors with gradient accumulators and Adam moments."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self.tensors: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in arrays.items():
            t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
            t.grad = np.zeros_like(t.data)
            self.tensors[name] = t
            self.m[name] = np.zeros_like(t.data)
            self.v[name] = np.zeros_like(t.data)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def get(self, name: str, frozen: bool = False) -> Tensor:
        """The parameter itself, or a gradient-blocking constant copy when ``frozen``."""
        t = self.tensors[name]
        return Tensor(t.data) if frozen else t

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad[...] = 0.0

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load(self, arrays: Mapping[str, np.ndarray]) -> None:
        _check_compatible(self.arrays(), arrays)
        for k, value in arrays.items():
            self.tensors[k].data[...] = value

    def copy(self) -> "ParameterSet":
        """Same values, fresh gradients and optimizer state."""
        return ParameterSet(self.arrays())

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _check_compatible(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> None:
    if set(a) != set(b):
        raise ConfigError(f"parameter names differ: {sorted(set(a) ^ set(b))}")
    for k in a:
        if np.shape(a[k]) != np.shape(b[k]):
            raise ConfigError(f"parameter {k!r}: shape {np.shape(a[k])} vs {np.shape(b[k])}")


def adam_step(params: ParameterSet, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParameterSet:
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    params.step += 1
    c1 = 1.0 - beta1 ** params.step
    c2 = 1.0 - beta2 ** params.step
    for name, t in params.tensors.items():
        g = t.grad
        m, v = params.m[name], params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"non-finite value in parameter {name!r} after Adam step {params.step}")
        g[...] = 0.0
    return params


def polyak_update(target: ParameterSet, online: ParameterSet, rho: float) -> ParameterSet:
    """target <- rho * target + (1 - rho) * online, elementwise."""
    _check_compatible(target.arrays(), online.arrays())
    for name, t in target.tensors.items():
        t.data *= rho
        t.data += (1.0 - rho) * online.tensors[name].data
    return target


def finite_diff_check(loss_fn: Callable[[], Tensor],
                      params: ParameterSet | Sequence[ParameterSet],
                      step: float = 1e-5, samples: int = 30,
                      rng: np.random.Generator | None = None,
                      floor: float = 1e-6) -> float:
    """Max relative error between backprop and central differences on sampled coordinates.

    ``loss_fn`` must be deterministic in the parameter values (freeze any sampling
    noise before calling).  The relative error uses ``max(|analytic|, |numeric|, floor)``
    as denominator so that coordinates with vanishing gradient do not dominate.
    """
    sets = [params] if isinstance(params, ParameterSet) else list(params)
    rng = rng if rng is not None else np.random.default_rng(0)
    for ps in sets:
        ps.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    coords = [(ps, name, idx) for ps in sets for name, t in ps.items()
              for idx in np.ndindex(t.shape)]
    if len(coords) > samples:
        coords = [coords[i] for i in rng.choice(len(coords), samples, replace=False)]
    worst = 0.0
    for ps, name, idx in coords:
        t = ps[name]
        analytic = t.grad[idx]
        orig = t.data[idx]
        t.data[idx] = orig + step
        up = loss_fn().item()
        t.data[idx] = orig - step
        down = loss_fn().item()
        t.data[idx] = orig
        numeric = (up - down) / (2.0 * step)
        denom = max(abs(analytic), abs(numeric), floor)
        worst = max(worst, abs(analytic - numeric) / denom)
    for ps in sets:
        ps.zero_grad()
    return worst
