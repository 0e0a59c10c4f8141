"""Dense float64 kernels and a splittable counter-based RNG.

Tensors are plain ``numpy.ndarray`` objects of dtype float64, C-contiguous
(row-major).  The functions here add the shape checks and error messages the
rest of the package relies on; they never mutate their inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

Tensor = np.ndarray

_ELEMENTWISE_OPS = ("add", "sub", "mul", "scale", "square")


class ShapeError(ValueError):
    pass


def as_tensor(data, *, allow_nonfinite: bool = False) -> Tensor:
    """Copy ``data`` into a fresh C-contiguous float64 array."""
    arr = np.array(data, dtype=np.float64, order="C", copy=True)
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def elementwise(op: str, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    """Pointwise ``add``, ``sub``, ``mul``, ``scale`` or ``square``.

    ``b`` may be a tensor of the same shape or a scalar; ``square`` ignores it
    and ``scale`` requires a scalar.
    """
    if op not in _ELEMENTWISE_OPS:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {_ELEMENTWISE_OPS}")
    a = np.asarray(a, dtype=np.float64)
    if op == "square":
        return a * a
    if b is None:
        raise ValueError(f"elementwise {op!r} needs a second operand")
    if op == "scale":
        if np.ndim(b) != 0:
            raise ShapeError(f"scale expects a scalar factor, got shape {np.shape(b)}")
        return a * float(b)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 0 and b.shape != a.shape:
        raise ShapeError(f"elementwise {op} shape mismatch: {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    return a * b


def frobenius_norm(a: Tensor) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


class RngState:
    """Deterministic, splittable random stream.

    Backed by the Philox-4x64 counter-based generator keyed through
    ``numpy.random.SeedSequence``.  Streams derived with :meth:`split` or
    :meth:`child` get distinct Philox keys; each stream has period 2**256, far
    beyond the ~1e9 draws any run in this package makes, so sibling streams
    cannot overlap in practice.

    An ``RngState`` is owned by one consumer at a time.  Hand sub-streams to
    other consumers instead of sharing the parent.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        self._seq = np.random.SeedSequence(seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(self._seq))
        self._n_split = 0

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, key={self.key})"

    def child(self, index: int) -> "RngState":
        """Stream for a fixed ``index``; does not advance this state."""
        return RngState(self.seed, self.key + (int(index),))

    def split(self, n: int = 2) -> list["RngState"]:
        """Return ``n`` fresh, mutually independent streams.

        Repeated calls keep producing new streams (the split counter is part
        of this state), so call order matters for reproducibility.
        """
        start = self._n_split
        self._n_split += n
        # offset keeps split children disjoint from child(i) for small i
        return [self.child(2**32 + i) for i in range(start, start + n)]

    def random(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def normal(self, shape=(), loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc, scale, shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def bernoulli_mask(rng: RngState, shape, p: float) -> Tensor:
    """Independent 0/1 draws, each 1 with probability ``p``."""
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"keep probability must lie in [0, 1], got {p}")
    # uniform draws lie in [0, 1): p=1 keeps everything, p=0 drops everything
    return (rng.random(shape) < p).astype(np.float64)
