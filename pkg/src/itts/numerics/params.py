"""Named parameter store with freezing, Adam updates, and L2 regularization."""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor

ADAM_PREFIX = "adam/"


class ParamStore:
    """Named trainable tensors plus per-name Adam moment state.

    Parameters are grouped by slash-separated name prefixes (for example
    `encoder/conv/w`); freezing by prefix flips both the trainable flag and
    the tensor's `requires_grad`, so frozen parameters record no graph edges
    and are skipped by the optimizer.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def create(self, name: str, shape, rng: np.random.Generator,
               fan_in: int | None = None, zero: bool = False) -> Tensor:
        """Add a parameter initialized uniform in [-s, s], s = sqrt(3/fan_in).

        The bound gives the weights variance 1/fan_in (unit signal gain), so
        multi-layer stacks neither explode nor starve at initialization.
        `fan_in` defaults to the product of all but the first dimension (or
        the length, for vectors). `zero=True` makes a zero-initialized
        parameter (biases, initial states).
        """
        shape = tuple(int(d) for d in shape)
        if zero:
            data = np.zeros(shape)
        else:
            if fan_in is None:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            s = float(np.sqrt(3.0 / fan_in))
            data = rng.uniform(-s, s, size=shape)
        return self.add(name, data)

    def add(self, name: str, data, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        if name.startswith(ADAM_PREFIX):
            raise ValueError(f"parameter name uses reserved prefix: {name}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=trainable)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, prefix: str, trainable: bool) -> int:
        """Set the trainable flag for every parameter whose name starts with
        `prefix`; returns the number of parameters affected."""
        count = 0
        for name, tensor in self._params.items():
            if name.startswith(prefix):
                self._trainable[name] = trainable
                tensor.requires_grad = trainable
                count += 1
        if count == 0:
            raise KeyError(f"no parameters match prefix {prefix!r}")
        return count

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def gradient(self, name: str) -> np.ndarray:
        tensor = self._params[name]
        if tensor.grad is None:
            return np.zeros_like(tensor.data)
        return tensor.grad

    def add_l2(self, weight: float) -> None:
        """Add weight * theta to every trainable parameter's gradient."""
        if weight == 0.0:
            return
        for name, tensor in self._params.items():
            if self._trainable[name]:
                tensor.accumulate_grad(weight * tensor.data)

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-6) -> None:
        """Standard Adam update (bias-corrected) on trainable parameters."""
        for name, tensor in self._params.items():
            if not self._trainable[name]:
                continue
            g = self.gradient(name)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(tensor.data)
                v = np.zeros_like(tensor.data)
            t = self._t.get(name, 0) + 1
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * (g * g)
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)
            self._m[name], self._v[name], self._t[name] = m, v, t

    def copy(self) -> "ParamStore":
        """Deep copy of parameters, flags, and optimizer state."""
        other = ParamStore()
        for name, tensor in self._params.items():
            other.add(name, tensor.data.copy(), trainable=self._trainable[name])
        for name in self._m:
            other._m[name] = self._m[name].copy()
            other._v[name] = self._v[name].copy()
            other._t[name] = self._t[name]
        return other

    def state_arrays(self, include_optimizer: bool = True) -> dict[str, np.ndarray]:
        """Flat name -> array mapping; optimizer moments under `adam/`."""
        out: dict[str, np.ndarray] = {}
        for name, tensor in self._params.items():
            out[name] = tensor.data
        if include_optimizer:
            for name in self._m:
                out[f"{ADAM_PREFIX}m/{name}"] = self._m[name]
                out[f"{ADAM_PREFIX}v/{name}"] = self._v[name]
                out[f"{ADAM_PREFIX}t/{name}"] = np.asarray([self._t[name]], dtype=np.int64)
        return out

    @classmethod
    def from_state_arrays(cls, arrays: dict[str, np.ndarray]) -> "ParamStore":
        store = cls()
        for name, data in arrays.items():
            if name.startswith(ADAM_PREFIX) or isinstance(data, (bytes, bytearray)):
                continue
            store.add(name, np.asarray(data, dtype=np.float64))
        for name in store.names():
            m = arrays.get(f"{ADAM_PREFIX}m/{name}")
            if m is not None:
                store._m[name] = np.asarray(m, dtype=np.float64)
                store._v[name] = np.asarray(arrays[f"{ADAM_PREFIX}v/{name}"], dtype=np.float64)
                store._t[name] = int(arrays[f"{ADAM_PREFIX}t/{name}"][0])
        return store

    def load_values(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite existing parameter values in place (shapes must match)."""
        for name, data in arrays.items():
            if name.startswith(ADAM_PREFIX) or name not in self._params:
                continue
            tensor = self._params[name]
            data = np.asarray(data, dtype=np.float64)
            if tensor.shape != data.shape:
                raise ShapeError("load_values", tensor.shape, data.shape)
            tensor.data = np.ascontiguousarray(data)
