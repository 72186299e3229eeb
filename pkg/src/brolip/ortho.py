"""Orthogonal and semi-orthogonal operator constructions.

The central construction is the block reflector W = I - 2 V (V^T V)^{-1} V^T
built from an unconstrained low-rank parameter V: W is symmetric, orthogonal,
and involutory, with n eigenvalues -1 and m-n eigenvalues +1. The
convolutional variant applies the same formula per spatial frequency after a
2D FFT, which yields a real, orthogonal multi-channel circular convolution.

Two competing constructions are provided for comparison: the Cayley
transform of a skew-symmetrized parameter, and the Newton-iteration polar
orthogonalization (with its per-iteration conditioning diagnostics, since
the iteration carries no orthogonality guarantee for ill-conditioned
parameters). A brute-force circulant materialization serves as the oracle
for the FFT path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ContractError, DivergedError, ShapeError
from .fft import fft2, ifft2
from .tensor import Tensor, as_real_array
from .tape import EagerOps

CONV_IMAG_TOL = 1e-9
_MATERIALIZE_CAP = 1024


@dataclass
class BroParam:
    """Unconstrained m x n parameter of a dense block reflector.

    Requires n < m (a full-rank square V degenerates to -I) and full column
    rank, which is verified by attempting a Cholesky factorization of V^T V.
    """

    v: np.ndarray
    m: int = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        self.v = as_real_array(self.v)
        if self.v.ndim != 2:
            raise ShapeError(f"parameter must be 2D, got shape {self.v.shape}")
        self.m, self.n = self.v.shape
        if self.n >= self.m:
            raise ContractError(
                f"need n < m for a non-degenerate reflector, got {self.m}x{self.n}")
        linalg.cholesky(self.v.T @ self.v)  # full column rank or SingularParameter


@dataclass
class BroConvKernel:
    """Unconstrained kernel of an orthogonal circular convolution.

    v has shape (c, n, k, k) with rank n <= c and odd kernel size k.
    `alpha` and `depth_norm` parameterize the identity residual
    re-parameterization V <- I + (alpha / depth_norm) V used by deep stacks.
    """

    v: np.ndarray
    alpha: float = 1.0
    depth_norm: float = 1.0

    def __post_init__(self):
        self.v = as_real_array(self.v)
        if self.v.ndim != 4 or self.v.shape[2] != self.v.shape[3]:
            raise ShapeError(f"kernel must be (c, n, k, k), got {self.v.shape}")
        c, n, k, _ = self.v.shape
        if n > c:
            raise ContractError(f"rank n={n} must not exceed channels c={c}")
        if k % 2 == 0:
            raise ContractError(f"kernel size must be odd, got k={k}")
        if not self.depth_norm > 0:
            raise ContractError("depth_norm must be positive")

    @property
    def channels(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        return self.v.shape[1]

    @property
    def ksize(self) -> int:
        return self.v.shape[2]


@dataclass(frozen=True)
class ConvGeometry:
    """Spatial bookkeeping for one convolution application."""

    channels_in: int
    channels_out: int
    spatial: int
    kernel: int
    keep_padding: bool = False

    @property
    def half_pad(self) -> int:
        return self.kernel // 2

    @property
    def padded_size(self) -> int:
        return self.spatial + 2 * self.half_pad


def block_reflector(v: np.ndarray) -> np.ndarray:
    """W = I - 2 V (V^T V)^{-1} V^T for a full-column-rank matrix V.

    Accepts square V (degenerating to -I); rank deficiency raises
    SingularParameter from the internal Cholesky factorization.
    """
    v = as_real_array(v)
    m = v.shape[0]
    z = linalg.solve_hpd(v.T @ v, v.T)
    return np.eye(m) - 2.0 * (v @ z)


def bro_orthogonalize(p: BroParam) -> Tensor:
    """Orthogonal, symmetric m x m operator derived from a BroParam."""
    return Tensor(block_reflector(p.v))


def identity_kernel(c: int, n: int, k: int) -> np.ndarray:
    """Convolution kernel acting as the identity parameterization seed.

    The Kronecker delta sits at the kernel center on the first min(c, n)
    channel pairs; remaining entries are zero.
    """
    out = np.zeros((c, n, k, k))
    center = k // 2
    for i in range(min(c, n)):
        out[i, i, center, center] = 1.0
    return out


def identity_residual(kernel: BroConvKernel) -> Tensor:
    """Effective parameter I + (alpha / depth_norm) V, built eagerly."""
    ik = identity_kernel(kernel.channels, kernel.rank, kernel.ksize)
    return Tensor(ik + (kernel.alpha / kernel.depth_norm) * kernel.v)


def conv_apply(ops, v_eff, x, geom: ConvGeometry):
    """Orthogonal circular convolution of a batched input, backend-generic.

    `x` is (B, c, s, s) and `v_eff` is (c, n, k, k); both are backend values
    (ndarrays for the eager backend, tape variables when recording). The
    parameterization is applied per spatial frequency on the channel axis.
    """
    kp = geom.half_pad
    size = geom.padded_size
    c = geom.channels_in
    batch = ops.value(x).shape[0]
    k = geom.kernel
    n = ops.value(v_eff).shape[1]

    xp = ops.pad_last2(x, kp, kp) if kp else x
    vp = ops.pad_last2(v_eff, 0, size - k) if size > k else v_eff

    xf = ops.fft2(xp)
    vf = ops.fft2(vp)

    xf = ops.reshape(ops.transpose(xf, (2, 3, 1, 0)), (size * size, c, batch))
    vf = ops.reshape(ops.transpose(vf, (2, 3, 0, 1)), (size * size, c, n))
    vh = ops.conj(ops.transpose(vf, (0, 2, 1)))

    gram = ops.matmul(vh, vf)
    rhs = ops.matmul(vh, xf)
    sol = ops.solve_h(gram, rhs)
    yf = ops.sub(xf, ops.scale(ops.matmul(vf, sol), 2.0))

    yf = ops.transpose(ops.reshape(yf, (size, size, c, batch)), (3, 2, 0, 1))
    y = ops.ifft2(yf)

    imag = np.abs(ops.value(y).imag)
    worst = float(imag.max()) if imag.size else 0.0
    if worst > CONV_IMAG_TOL:
        raise ContractError(
            f"imaginary residue {worst:.3e} exceeds {CONV_IMAG_TOL:.1e}; "
            "parameterization should produce a real output")
    y = ops.real(y)
    if not geom.keep_padding and kp:
        y = ops.crop_last2(y, kp)
    return y


def bro_conv_forward(kernel: BroConvKernel, x, geom: ConvGeometry) -> Tensor:
    """Apply the orthogonal convolution parameterized by `kernel.v`.

    Accepts a single (c, s, s) input or a batch (B, c, s, s). The kernel is
    used as given; the identity residual re-parameterization is a separate,
    explicit step.
    """
    arr = as_real_array(x)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[2] != arr.shape[3]:
        raise ShapeError(f"input must be (c, s, s) or (B, c, s, s), got {arr.shape}")
    if geom.channels_in != geom.channels_out:
        raise ContractError("convolution path is dimension-preserving; "
                            "use semi-orthogonal truncation for channel changes")
    if arr.shape[1] != kernel.channels or arr.shape[1] != geom.channels_in:
        raise ShapeError(
            f"channel mismatch: input {arr.shape[1]}, kernel {kernel.channels}, "
            f"geometry {geom.channels_in}")
    if arr.shape[2] != geom.spatial or geom.kernel != kernel.ksize:
        raise ShapeError("geometry does not match input or kernel")
    out = conv_apply(EagerOps, kernel.v, arr, geom)
    return Tensor(out[0] if single else out)


def semi_ortho_truncate(w, c_out: int, c_in: int, ortho_tol: float = 1e-8) -> Tensor:
    """Truncate a c x c orthogonal matrix to its leading c_out x c_in block.

    Expanding blocks (c_in < c_out) keep orthonormal columns and preserve
    norms; reducing blocks keep orthonormal rows and never expand norms.
    """
    w = as_real_array(w)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"expected a square matrix, got {w.shape}")
    c = w.shape[0]
    if max(c_out, c_in) != c:
        raise ContractError(
            f"max(c_out, c_in) = {max(c_out, c_in)} must equal matrix size {c}")
    dev = np.linalg.norm(w.T @ w - np.eye(c))
    if dev > ortho_tol:
        raise ContractError(f"matrix fails orthogonality check ({dev:.3e})")
    return Tensor(w[:c_out, :c_in])


def cayley_orthogonalize(v) -> Tensor:
    """Cayley transform W = (I - A)(I + A)^{-1} of A = (v - v^T)/2.

    I + A is always invertible for real skew-symmetric A; the solve is
    routed through the SPD system I - A^2 = I + A^T A.
    """
    v = as_real_array(v)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ShapeError(f"expected a square matrix, got {v.shape}")
    m = v.shape[0]
    a = 0.5 * (v - v.T)
    eye = np.eye(m)
    spd = eye - a @ a
    num = (eye - a) @ (eye - a)
    return Tensor(linalg.solve_hpd(spd, num))


def lot_orthogonalize(v, iters: int) -> tuple[Tensor, list[float]]:
    """Newton-iteration polar orthogonalization W = V (V^T V)^{-1/2}.

    Runs the coupled iteration Y_{i+1} = Y_i (3I - Z_i Y_i)/2,
    Z_{i+1} = (3I - Z_i Y_i) Z_i / 2 from Y_0 = V^T V scaled by its
    Frobenius norm (the scaling is folded into V so a converged Z still
    yields the polar factor). Returns the final V Z product and the
    condition number of W^T W after each iteration; there is no
    orthogonality guarantee, the trace is the product.
    """
    v = as_real_array(v)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ShapeError(f"expected a square matrix, got {v.shape}")
    if iters < 1:
        raise ContractError("need at least one iteration")
    m = v.shape[0]
    gram = v.T @ v
    fnorm = float(np.linalg.norm(gram))
    with np.errstate(divide="ignore", invalid="ignore"):
        y = gram / fnorm
        vn = v / np.sqrt(fnorm)
    eye = np.eye(m)
    z = eye.copy()
    conds: list[float] = []
    w = vn @ z
    for i in range(1, iters + 1):
        t = 3.0 * eye - z @ y
        y = 0.5 * (y @ t)
        z = 0.5 * (t @ z)
        w = vn @ z
        if not np.all(np.isfinite(w)):
            raise DivergedError(i, "non-finite iterate")
        conds.append(linalg.cond_spd(w.T @ w))
    return Tensor(w), conds


def materialize_conv_matrix(kernel: BroConvKernel, s: int) -> Tensor:
    """Explicit (c s^2) x (c s^2) matrix of the circular convolution.

    Restricted to the no-extra-pad path (k = 1) and to c s^2 <= 1024; used
    as the structural oracle for the FFT path. Row/column blocks follow the
    per-channel row-major vectorization, and each (c_out, c_in) block is the
    doubly circulant matrix of the effective spatial kernel.
    """
    if kernel.ksize != 1:
        raise ContractError("materialization covers the k=1 (no extra pad) path")
    c = kernel.channels
    dim = c * s * s
    if dim > _MATERIALIZE_CAP:
        raise ContractError(f"size cap exceeded: c*s^2 = {dim} > {_MATERIALIZE_CAP}")

    n = kernel.rank
    emb = np.zeros((c, n, s, s))
    emb[:, :, 0, 0] = kernel.v[:, :, 0, 0]
    vf = fft2(emb)                                    # (c, n, s, s)
    vf = vf.transpose(2, 3, 0, 1).reshape(s * s, c, n)
    vh = np.conj(np.swapaxes(vf, -1, -2))
    sol = linalg.solve_hpd(vh @ vf, vh)               # (s^2, n, c)
    wf = np.eye(c)[None] - 2.0 * (vf @ sol)           # (s^2, c, c)

    # Effective spatial kernels: the frequency response equals the
    # unnormalized DFT of the kernel, hence the extra 1/s on the unitary
    # inverse transform.
    wf_img = wf.reshape(s, s, c, c).transpose(2, 3, 0, 1)
    h = ifft2(wf_img) / s
    if float(np.max(np.abs(h.imag))) > 1e-9:
        raise ContractError("effective spatial kernel has imaginary residue")
    h = h.real

    p = np.arange(s * s)
    pr, pc = p // s, p % s
    dr = (pr[:, None] - pr[None, :]) % s
    dc = (pc[:, None] - pc[None, :]) % s
    out = np.empty((dim, dim))
    for co in range(c):
        for ci in range(c):
            out[co * s * s:(co + 1) * s * s, ci * s * s:(ci + 1) * s * s] = \
                h[co, ci][dr, dc]
    return Tensor(out)
