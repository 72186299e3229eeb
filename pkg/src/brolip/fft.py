"""Unitary 2D discrete Fourier transforms.

The 1D core is a recursive mixed-radix Cooley-Tukey decomposition with a
direct matrix-product DFT as the base case. Any length up to 64, and any
prime length, takes the direct path: at desk scale the O(n^2) base case is
both fast (one BLAS call) and the easiest to trust. The 2D wrappers apply
the unitary normalization 1/s per axis so that transforms preserve the
l2 norm exactly in exact arithmetic.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import CTensor, Tensor, as_complex_array, as_real_array, record_alloc

_DIRECT_CUTOFF = 64

_dft_cache: dict[int, np.ndarray] = {}


def _dft_matrix(n: int) -> np.ndarray:
    """Unnormalized DFT matrix F[j, k] = exp(-2i*pi*j*k/n)."""
    mat = _dft_cache.get(n)
    if mat is None:
        j = np.arange(n)
        mat = np.exp((-2j * np.pi / n) * np.outer(j, j))
        _dft_cache[n] = mat
    return mat


def _smallest_prime_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    p = 3
    while p * p <= n:
        if n % p == 0:
            return p
        p += 2
    return n


def _fft1_last(a: np.ndarray) -> np.ndarray:
    """Unnormalized DFT along the last axis (complex in, complex out)."""
    n = a.shape[-1]
    p = _smallest_prime_factor(n)
    if n <= _DIRECT_CUTOFF or p == n:
        return a @ _dft_matrix(n)
    m = n // p
    # Decimation in time: column r holds the subsequence a[..., r::p].
    sub = a.reshape(a.shape[:-1] + (m, p))
    sub = _fft1_last(np.swapaxes(sub, -1, -2))  # (..., p, m) transformed
    sub = np.swapaxes(sub, -1, -2)              # (..., m, p): S[k2, r]
    k2 = np.arange(m).reshape(m, 1)
    r = np.arange(p).reshape(1, p)
    twiddle = np.exp((-2j * np.pi / n) * (k2 * r))
    combined = (sub * twiddle) @ _dft_matrix(p)  # (..., m, p): X[k1*m + k2]
    return np.swapaxes(combined, -1, -2).reshape(a.shape)


def _check_square_trailing(shape: tuple[int, ...]) -> int:
    if len(shape) < 2:
        raise ShapeError(f"need at least 2 dims for a 2D transform, got shape {shape}")
    if shape[-1] != shape[-2]:
        raise ShapeError(f"trailing dims must be square, got {shape[-2]}x{shape[-1]}")
    if shape[-1] < 1:
        raise ShapeError("spatial size must be at least 1")
    return shape[-1]


def fft2(a: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT over the trailing two axes of an ndarray."""
    s = _check_square_trailing(a.shape)
    out = np.ascontiguousarray(a, dtype=np.complex128)
    out = _fft1_last(out)
    out = _fft1_last(np.swapaxes(out, -1, -2))
    out = np.swapaxes(out, -1, -2)
    record_alloc(out.size)
    return out / s


def ifft2(a: np.ndarray) -> np.ndarray:
    """Unitary inverse 2D DFT; exact inverse of :func:`fft2`."""
    return np.conj(fft2(np.conj(a)))


def fft2d(x) -> CTensor:
    """Unitary 2D DFT of a real tensor, applied to each leading slice."""
    arr = as_real_array(x)
    return CTensor(fft2(arr))


def ifft2d(x) -> CTensor:
    """Unitary inverse 2D DFT of a complex tensor."""
    arr = as_complex_array(x)
    return CTensor(ifft2(arr))


def ifft2d_real(x, imag_tol: float | None = None) -> Tensor:
    """Inverse transform expected to land on a real tensor.

    When `imag_tol` is given, the discarded imaginary magnitude is checked
    against it.
    """
    arr = ifft2(as_complex_array(x))
    if imag_tol is not None:
        worst = float(np.max(np.abs(arr.imag))) if arr.size else 0.0
        if worst > imag_tol:
            raise ShapeError(
                f"imaginary residue {worst:.3e} exceeds tolerance {imag_tol:.1e}")
    return Tensor(arr.real)
