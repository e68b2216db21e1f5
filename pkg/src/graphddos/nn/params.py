"""Named trainable parameters and their registry."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple

import numpy as np

from ..errors import ConsistencyError, NotFoundError


@dataclass
class Parameter:
    """A trainable array plus its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
        if self.grad.shape != self.value.shape:
            raise ConsistencyError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape} "
                f"for parameter {self.name!r}"
            )

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class ParameterBag:
    """Registry of all parameters in a model, keyed by unique name.

    Iteration order is sorted by name so optimizer updates and serialized
    checkpoints are independent of registration order.
    """

    def __init__(self):
        self._params: Dict[str, Parameter] = {}

    def register(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ConsistencyError(f"duplicate parameter name {name!r}")
        p = Parameter(name=name, value=np.asarray(value, dtype=np.float64))
        self._params[name] = p
        return p

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        if name not in self._params:
            raise NotFoundError(f"unknown parameter {name!r}")
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return sorted(self._params)

    def __iter__(self) -> Iterator[Parameter]:
        for name in self.names():
            yield self._params[name]

    def items(self) -> Iterator[Tuple[str, Parameter]]:
        for name in self.names():
            yield name, self._params[name]

    def zero_grads(self) -> None:
        for p in self:
            p.zero_grad()

    def count_values(self) -> int:
        return sum(p.value.size for p in self)

    # Serialization stores each float as a 17-significant-digit decimal,
    # which parses back to the identical IEEE-754 double.

    def to_json_dict(self) -> dict:
        out = {}
        for name, p in self.items():
            out[name] = {
                "shape": list(p.value.shape),
                "data": ["%.17g" % float(v) for v in p.value.ravel()],
            }
        return out

    def load_json_dict(self, blob: dict) -> None:
        missing = set(self._params) - set(blob)
        extra = set(blob) - set(self._params)
        if missing or extra:
            raise ConsistencyError(
                f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, entry in blob.items():
            p = self._params[name]
            shape = tuple(entry["shape"])
            if shape != p.value.shape:
                raise ConsistencyError(
                    f"shape mismatch for {name!r}: stored {shape}, model {p.value.shape}"
                )
            flat = np.array([float(s) for s in entry["data"]], dtype=np.float64)
            if flat.size != p.value.size:
                raise ConsistencyError(f"element count mismatch for {name!r}")
            p.value[...] = flat.reshape(shape)

    def save(self, path: str, header: dict | None = None) -> None:
        doc = {"header": header or {}, "parameters": self.to_json_dict()}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))

    def load(self, path: str) -> dict:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        self.load_json_dict(doc["parameters"])
        return doc.get("header", {})
