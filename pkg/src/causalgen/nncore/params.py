"""Named float64 array stores for parameters and their gradients."""

from __future__ import annotations

import numpy as np


class ParamStore:
    """Ordered mapping of unique names to fixed-shape float64 arrays.

    Shapes are frozen at first assignment; iteration order is insertion
    order, which makes serialization and optimizer sweeps deterministic.
    """

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        if arrays:
            for name, arr in arrays.items():
                self.add(name, arr)

    def add(self, name: str, array) -> None:
        if name in self._arrays:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.asarray(array, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ValueError(f"non-finite entries in parameter {name!r}")
        self._arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, array) -> None:
        arr = np.asarray(array, dtype=np.float64)
        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}; use add() to create")
        if arr.shape != self._arrays[name].shape:
            raise ValueError(
                f"shape {arr.shape} does not match {self._arrays[name].shape} for {name!r}"
            )
        self._arrays[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def n_elements(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def to_vector(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def from_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_elements():
            raise ValueError(f"vector size {vec.size} != store size {self.n_elements()}")
        offset = 0
        for name, arr in self._arrays.items():
            self._arrays[name] = vec[offset : offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size

    def check_congruent(self, other: "ParamStore") -> None:
        if self.names() != other.names():
            raise ValueError("stores have different parameter names")
        for name, arr in self._arrays.items():
            if other[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name!r}")


class GradStore(ParamStore):
    """Gradients keyed/shaped like their paired :class:`ParamStore`.

    Unlike parameters, gradient entries may be non-finite; rejecting such
    steps is the optimizer's job.
    """

    def add(self, name: str, array) -> None:
        if name in self._arrays:
            raise KeyError(f"gradient {name!r} already exists")
        self._arrays[name] = np.asarray(array, dtype=np.float64)

    @classmethod
    def zeros_for(cls, params: ParamStore) -> "GradStore":
        return cls({name: np.zeros_like(arr) for name, arr in params.items()})
