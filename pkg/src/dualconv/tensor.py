"""Rank-4 tensor helpers and the im2col/GEMM lowering primitives.

Tensors are plain ``numpy.ndarray`` objects of rank 4 in (batch, channel,
row, column) order, C-contiguous, with dtype float32 or float64. Matrices are
rank-2 C-contiguous arrays. Every function here returns a new array.

im2col row ordering is channel-major, then kernel row, then kernel column::

    row = c * K * K + ky * K + kx

and column ordering is batch-major, then output row, then output column::

    col = b * Ho * Wo + y * Wo + x
"""

from __future__ import annotations

import contextlib
import contextvars
import io
import struct
import sys
from typing import BinaryIO, Iterator, NamedTuple

import numpy as np

from .errors import FormatError, GeometryError, PrecisionError, ShapeError

PRECISIONS = {32: np.dtype(np.float32), 64: np.dtype(np.float64)}

TENSOR_MAGIC = b"DCTENSR1"

GEMM_VARIANTS = ("reference", "tiled")
_gemm_variant = contextvars.ContextVar("gemm_variant", default="reference")
_gemm_tile = contextvars.ContextVar("gemm_tile", default=64)


class Shape4(NamedTuple):
    batch: int
    channels: int
    height: int
    width: int

    @property
    def size(self) -> int:
        return self.batch * self.channels * self.height * self.width


def as_dtype(precision) -> np.dtype:
    """Map 32/64, a numpy dtype, or a dtype name to float32/float64."""
    if precision in PRECISIONS:
        return PRECISIONS[precision]
    try:
        dt = np.dtype(precision)
    except TypeError:
        raise PrecisionError(f"unsupported precision {precision!r}; use 32 or 64") from None
    if dt not in (np.float32, np.float64):
        raise PrecisionError(f"unsupported precision {precision!r}; use float32 or float64")
    return dt


def check_shape(shape) -> Shape4:
    if len(shape) != 4:
        raise ShapeError(f"expected 4 extents, got {len(shape)}")
    extents = []
    for e in shape:
        if int(e) != e or e < 1:
            raise ShapeError(f"every extent must be an integer >= 1, got {tuple(shape)}")
        extents.append(int(e))
    s = Shape4(*extents)
    # element count must be addressable as bytes of float64
    if s.size > sys.maxsize // 8:
        raise ShapeError(f"element count {s.size} exceeds addressable size")
    return s


def check_tensor(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(t, np.ndarray) or t.ndim != 4:
        raise ShapeError(f"{name} must be a rank-4 array")
    as_dtype(t.dtype)
    return t


def same_precision(*arrays: np.ndarray) -> np.dtype:
    dtypes = {a.dtype for a in arrays if a is not None}
    if len(dtypes) != 1:
        raise PrecisionError(f"mixed precision operands: {sorted(str(d) for d in dtypes)}")
    return as_dtype(dtypes.pop())


def zeros(shape, precision=32) -> np.ndarray:
    return np.zeros(check_shape(shape), dtype=as_dtype(precision))


def seeded_random(shape, seed: int, precision=32) -> np.ndarray:
    """Uniform values in [-1, 1], bit-identical for equal (shape, seed, precision).

    Values are drawn in float64 and rounded once to the requested precision,
    so the float32 and float64 tensors for one seed agree to float32 rounding.
    """
    shape = check_shape(shape)
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=shape).astype(as_dtype(precision))


def output_extent(d_in: int, k: int, stride: int, padding: int) -> int:
    """``floor((d_in + 2*padding - k) / stride) + 1``; raises if it is < 1."""
    span = d_in + 2 * padding - k
    if span < 0:
        raise GeometryError(
            f"kernel {k} does not fit input extent {d_in} with padding {padding}")
    return span // stride + 1


def pad_spatial(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def im2col(x: np.ndarray, k: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Unroll K x K receptive fields into the columns of a matrix.

    Returns an array of shape ``(C*K*K, B*Ho*Wo)``; positions outside the
    input are zero (symmetric zero padding).
    """
    check_tensor(x, "input")
    if k < 1 or stride < 1 or padding < 0:
        raise GeometryError(f"invalid k={k}, stride={stride}, padding={padding}")
    b, c, h, w = x.shape
    ho = output_extent(h, k, stride, padding)
    wo = output_extent(w, k, stride, padding)
    xp = pad_spatial(x, padding)
    cols = np.empty((c, k, k, b, ho, wo), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            patch = xp[:, :, ky:ky + stride * (ho - 1) + 1:stride,
                       kx:kx + stride * (wo - 1) + 1:stride]
            cols[:, ky, kx] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, b * ho * wo)


def col2im(cols: np.ndarray, shape, k: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to an input-shaped tensor."""
    b, c, h, w = check_shape(shape)
    ho = output_extent(h, k, stride, padding)
    wo = output_extent(w, k, stride, padding)
    if cols.shape != (c * k * k, b * ho * wo):
        raise GeometryError(f"column matrix {cols.shape} does not match input {tuple(shape)}")
    blocks = cols.reshape(c, k, k, b, ho, wo)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky:ky + stride * (ho - 1) + 1:stride,
               kx:kx + stride * (wo - 1) + 1:stride] += blocks[:, ky, kx].transpose(1, 0, 2, 3)
    if padding:
        xp = xp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(xp)


def _check_gemm(a: np.ndarray, b: np.ndarray) -> np.dtype:
    if a.ndim != 2 or b.ndim != 2:
        raise GeometryError("gemm operands must be matrices")
    if a.shape[1] != b.shape[0]:
        raise GeometryError(f"gemm dimension mismatch: {a.shape} x {b.shape}")
    return same_precision(a, b)


def gemm_reference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense product accumulated over the inner index in ascending order.

    Each output element equals the scalar loop ``acc = 0; for k: acc += a[i,k]*b[k,j]``
    evaluated in the operands' precision, so results are reproducible bit for bit.
    """
    dtype = _check_gemm(a, b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=dtype)
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k])
    return out


def gemm_tiled(a: np.ndarray, b: np.ndarray, tile: int | None = None) -> np.ndarray:
    """Inner dimension split into tiles; each tile uses BLAS, tiles summed in order."""
    dtype = _check_gemm(a, b)
    tile = tile or _gemm_tile.get()
    out = np.zeros((a.shape[0], b.shape[1]), dtype=dtype)
    for k0 in range(0, a.shape[1], tile):
        out += a[:, k0:k0 + tile] @ b[k0:k0 + tile]
    return out


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product using the variant selected by :func:`gemm_mode`."""
    if _gemm_variant.get() == "tiled":
        return gemm_tiled(a, b)
    return gemm_reference(a, b)


def current_gemm_variant() -> str:
    return _gemm_variant.get()


@contextlib.contextmanager
def gemm_mode(variant: str, tile: int = 64) -> Iterator[None]:
    """Select the GEMM variant used by every convolution inside the block."""
    if variant not in GEMM_VARIANTS:
        raise ValueError(f"unknown gemm variant {variant!r}; choose from {GEMM_VARIANTS}")
    tok_v = _gemm_variant.set(variant)
    tok_t = _gemm_tile.set(tile)
    try:
        yield
    finally:
        _gemm_variant.reset(tok_v)
        _gemm_tile.reset(tok_t)


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))


# -- golden-file serialization -------------------------------------------------

def write_tensor(fh: BinaryIO, t: np.ndarray) -> None:
    check_tensor(t)
    tag = t.dtype.itemsize
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<B4Q", tag, *t.shape))
    fh.write(np.ascontiguousarray(t, dtype=t.dtype.newbyteorder("<")).tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(8)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    header = fh.read(33)
    if len(header) != 33:
        raise FormatError("truncated tensor header")
    tag, *dims = struct.unpack("<B4Q", header)
    if tag not in (4, 8):
        raise FormatError(f"bad precision tag {tag}")
    shape = check_shape(dims)
    dtype = np.dtype("<f4" if tag == 4 else "<f8")
    nbytes = shape.size * tag
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError("truncated tensor payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def tensor_to_bytes(t: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def save_tensor(path, t: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, t)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
