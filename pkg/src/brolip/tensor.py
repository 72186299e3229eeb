"""Dense real and complex tensor value types.

Everything in the library computes on float64/complex128 numpy arrays;
`Tensor` and `CTensor` are the thin value types used at API boundaries.
They normalize input to contiguous row-major storage and feed the
allocation counters consumed by the benchmark harness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError


@dataclass
class AllocStats:
    """Running totals of arrays handed out by the op layer."""

    count: int = 0
    elements: int = 0

    def copy(self) -> "AllocStats":
        return AllocStats(self.count, self.elements)


_STATS = AllocStats()


def record_alloc(n_elements: int) -> None:
    _STATS.count += 1
    _STATS.elements += int(n_elements)


def alloc_stats() -> AllocStats:
    """Snapshot of the allocation counters."""
    return _STATS.copy()


def reset_alloc_stats() -> None:
    _STATS.count = 0
    _STATS.elements = 0


def _contiguous(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.asarray(arr).astype(dtype, copy=False)
    if out.ndim and not out.flags["C_CONTIGUOUS"]:
        out = np.ascontiguousarray(out)
    return out


def as_real_array(x) -> np.ndarray:
    """Coerce a Tensor or array-like to a contiguous float64 ndarray."""
    if isinstance(x, Tensor):
        return x.array
    return _contiguous(x, np.float64)


def as_complex_array(x) -> np.ndarray:
    """Coerce a CTensor, Tensor, or array-like to a complex128 ndarray."""
    if isinstance(x, CTensor):
        return x.array
    if isinstance(x, Tensor):
        return x.array.astype(np.complex128)
    return _contiguous(x, np.complex128)


class Tensor:
    """Real tensor: row-major float64 data with an explicit shape."""

    __slots__ = ("array",)

    def __init__(self, values):
        arr = _contiguous(values, np.float64)
        record_alloc(arr.size)
        self.array = arr

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the entries."""
        return self.array.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.array))

    def check_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.array)):
            raise ContractError("tensor contains non-finite entries")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class CTensor:
    """Complex tensor stored as complex128; `re`/`im` expose flat parts."""

    __slots__ = ("array",)

    def __init__(self, values, im=None):
        if im is not None:
            re_arr = _contiguous(values, np.float64)
            im_arr = _contiguous(im, np.float64)
            if re_arr.shape != im_arr.shape:
                raise ShapeError("re and im parts must have identical shapes")
            arr = re_arr + 1j * im_arr
        else:
            arr = _contiguous(values, np.complex128)
        record_alloc(arr.size)
        self.array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def re(self) -> np.ndarray:
        return np.ascontiguousarray(self.array.real).reshape(-1)

    @property
    def im(self) -> np.ndarray:
        return np.ascontiguousarray(self.array.imag).reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.array))

    def __repr__(self) -> str:
        return f"CTensor(shape={self.shape})"
