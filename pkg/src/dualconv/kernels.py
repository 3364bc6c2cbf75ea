"""Forward/backward kernels for the five convolution operator families.

All operators are bias-free cross-correlations (no kernel flip) on NCHW
tensors, lowered to im2col + GEMM. ``reference_direct`` is an independent
loop-based oracle used by the tests.

Channel layouts
---------------
Group / Dual
    filter ``n`` belongs to group ``n // (N/G)`` and its K x K kernels read
    input channels ``[g*M/G, (g+1)*M/G)``.
Het
    filter ``n`` applies K x K kernels to channels ``c`` with
    ``c % P == n % P`` (ascending; spatial block column ``j`` is channel
    ``n % P + j*P``) and 1 x 1 kernels to the remaining channels (ascending,
    pointwise block column ``j`` is the ``j``-th such channel).

1 x 1 alignment
---------------
Whenever a 1 x 1 kernel is summed with K x K kernels (Dual, Het) it reads the
input pixel under the centre tap ``(K-1)//2`` of the K x K window. For
``K=3, padding=1`` this is the usual same-origin alignment; for stride 1 and
smaller padding it is a centre crop of the plain 1 x 1 output.
"""

from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass, replace
from typing import BinaryIO

import numpy as np

from .errors import FormatError, GeometryError, ShapeError, SpecError
from .tensor import (as_dtype, check_tensor, col2im, gemm, im2col, output_extent,
                     pad_spatial, read_tensor, same_precision, write_tensor)

WEIGHT_MAGIC = b"DCWGHT01"


class ConvKind(enum.Enum):
    STANDARD = "std"
    DEPTHWISE_SEPARABLE = "dsc"
    GROUP = "group"
    HET = "het"
    DUAL = "dual"

    @property
    def tag(self) -> int:
        return _KIND_TAGS[self]

    @classmethod
    def from_tag(cls, tag: int) -> "ConvKind":
        for kind, t in _KIND_TAGS.items():
            if t == tag:
                return kind
        raise FormatError(f"unknown kind tag {tag}")

    @classmethod
    def parse(cls, text: str) -> "ConvKind":
        text = text.lower()
        for kind in cls:
            if text in (kind.value, kind.name.lower()):
                return kind
        aliases = {"standard": cls.STANDARD, "gc": cls.GROUP, "hc": cls.HET,
                   "depthwise": cls.DEPTHWISE_SEPARABLE}
        if text in aliases:
            return aliases[text]
        raise ValueError(f"unknown convolution kind {text!r}")


_KIND_TAGS = {ConvKind.STANDARD: 0, ConvKind.DEPTHWISE_SEPARABLE: 1, ConvKind.GROUP: 2,
              ConvKind.HET: 3, ConvKind.DUAL: 4}


@dataclass(frozen=True)
class ConvSpec:
    kind: ConvKind
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    groups: int | None = None
    parts: int | None = None

    def __post_init__(self):
        M, N = self.in_channels, self.out_channels
        for name in ("in_channels", "out_channels", "kernel_size", "stride"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise SpecError(f"{name} must be an integer >= 1, got {v!r}")
        if self.padding < 0:
            raise SpecError(f"padding must be >= 0, got {self.padding}")
        if self.kind in (ConvKind.GROUP, ConvKind.DUAL):
            G = self.groups
            if G is None or G < 1:
                raise SpecError(f"{self.kind.value} convolution needs a group count >= 1")
            if M % G or N % G:
                raise SpecError(f"groups={G} must divide M={M} and N={N}")
            if self.parts is not None:
                raise SpecError(f"{self.kind.value} convolution takes no part ratio")
        elif self.kind is ConvKind.HET:
            P = self.parts
            if P is None or P < 1:
                raise SpecError("het convolution needs a part ratio >= 1")
            if M % P:
                raise SpecError(f"parts={P} must divide M={M}")
            if self.groups is not None:
                raise SpecError("het convolution takes no group count")
        elif self.groups is not None or self.parts is not None:
            raise SpecError(f"{self.kind.value} convolution takes no groups/parts")

    @property
    def group_or_part(self) -> int | None:
        return self.groups if self.groups is not None else self.parts

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (output_extent(h, self.kernel_size, self.stride, self.padding),
                output_extent(w, self.kernel_size, self.stride, self.padding))

    @property
    def spatial_shape(self) -> tuple[int, int, int, int]:
        M, N, K = self.in_channels, self.out_channels, self.kernel_size
        if self.kind is ConvKind.STANDARD:
            return (N, M, K, K)
        if self.kind in (ConvKind.GROUP, ConvKind.DUAL):
            return (N, M // self.groups, K, K)
        if self.kind is ConvKind.HET:
            return (N, M // self.parts, K, K)
        return (M, 1, K, K)

    @property
    def pointwise_shape(self) -> tuple[int, int] | None:
        M, N = self.in_channels, self.out_channels
        if self.kind in (ConvKind.DUAL, ConvKind.DEPTHWISE_SEPARABLE):
            return (N, M)
        if self.kind is ConvKind.HET:
            return (N, M - M // self.parts)
        return None

    def converted(self, kind: ConvKind, g_or_p: int | None = None) -> "ConvSpec":
        """Same geometry with a different operator kind."""
        groups = g_or_p if kind in (ConvKind.GROUP, ConvKind.DUAL) else None
        parts = g_or_p if kind is ConvKind.HET else None
        return replace(self, kind=kind, groups=groups, parts=parts)


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Weights of one layer; ``pointwise`` is the 1 x 1 branch when the kind has one."""
    spatial: np.ndarray
    pointwise: np.ndarray | None = None

    @property
    def dtype(self) -> np.dtype:
        return self.spatial.dtype

    @property
    def param_count(self) -> int:
        return self.spatial.size + (0 if self.pointwise is None else self.pointwise.size)

    def validate(self, spec: ConvSpec) -> None:
        if self.spatial.shape != spec.spatial_shape:
            raise SpecError(f"spatial block {self.spatial.shape} != expected {spec.spatial_shape}")
        expected = spec.pointwise_shape
        if expected is None:
            if self.pointwise is not None:
                raise SpecError(f"{spec.kind.value} convolution has no pointwise block")
        else:
            if self.pointwise is None:
                raise SpecError(f"{spec.kind.value} convolution requires a pointwise block")
            if self.pointwise.shape != expected:
                raise SpecError(f"pointwise block {self.pointwise.shape} != expected {expected}")
        same_precision(self.spatial, self.pointwise)

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        if (self.pointwise is None) != (other.pointwise is None):
            return False
        return (np.array_equal(self.spatial, other.spatial) and self.spatial.dtype == other.spatial.dtype
                and (self.pointwise is None or np.array_equal(self.pointwise, other.pointwise)))


@dataclass(frozen=True)
class ConvGradients:
    d_input: np.ndarray
    d_spatial: np.ndarray
    d_pointwise: np.ndarray | None = None


def het_channels(in_channels: int, parts: int, filter_index: int) -> tuple[np.ndarray, np.ndarray]:
    """(K x K channel indices, 1 x 1 channel indices) of one Het filter."""
    r = filter_index % parts
    idx = np.arange(in_channels)
    return idx[idx % parts == r], idx[idx % parts != r]


def init_filters(spec: ConvSpec, seed=0, precision=32) -> FilterBank:
    """Uniform weights in +-sqrt(1/fan_in) per branch, deterministic from ``seed``.

    ``seed`` may be an int or a ``numpy.random.Generator``. The spatial block is
    drawn before the pointwise block, so Group and Dual layers built from the
    same seed share their K x K weights.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dtype = as_dtype(precision)
    s_shape = spec.spatial_shape
    fan_in = s_shape[1] * s_shape[2] * s_shape[3]
    bound = math.sqrt(1.0 / fan_in)
    spatial = rng.uniform(-bound, bound, size=s_shape).astype(dtype)
    pointwise = None
    p_shape = spec.pointwise_shape
    if p_shape is not None:
        bound = math.sqrt(1.0 / max(p_shape[1], 1))
        pointwise = rng.uniform(-bound, bound, size=p_shape).astype(dtype)
    return FilterBank(spatial, pointwise)


def zero_filters(spec: ConvSpec, precision=32) -> FilterBank:
    dtype = as_dtype(precision)
    p_shape = spec.pointwise_shape
    return FilterBank(np.zeros(spec.spatial_shape, dtype),
                      None if p_shape is None else np.zeros(p_shape, dtype))


# -- lowering helpers -----------------------------------------------------------

def _to_matrix(t: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (C, B*H*W)."""
    b, c, h, w = t.shape
    return t.transpose(1, 0, 2, 3).reshape(c, b * h * w)


def _from_matrix(m: np.ndarray, b: int, h: int, w: int) -> np.ndarray:
    """(C, B*H*W) -> contiguous (B, C, H, W)."""
    return np.ascontiguousarray(m.reshape(m.shape[0], b, h, w).transpose(1, 0, 2, 3))


def _check_input(x: np.ndarray, spec: ConvSpec, w: FilterBank) -> None:
    check_tensor(x, "input")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    w.validate(spec)
    same_precision(x, w.spatial)


def _expect(spec: ConvSpec, *kinds: ConvKind) -> None:
    if spec.kind not in kinds:
        raise SpecError(f"expected kind {'/'.join(k.value for k in kinds)}, got {spec.kind.value}")


def pointwise_offset(spec: ConvSpec) -> int:
    """Input offset at which the 1 x 1 branch of a Dual/Het layer samples."""
    return (spec.kernel_size - 1) // 2 - spec.padding


def _sample_window(h: int, stride: int, offset: int, out: int) -> tuple[int, int, int]:
    """Padding (lo, hi) and start index so that ``start + stride*i`` addresses ``offset + stride*i``."""
    lo = max(0, -offset)
    hi = max(0, offset + stride * (out - 1) - (h - 1))
    return lo, hi, offset + lo


def sample_grid(x: np.ndarray, stride: int, offset: int, out_h: int, out_w: int) -> np.ndarray:
    """``x[:, :, offset + stride*y, offset + stride*x]`` with zeros outside the input."""
    b, c, h, w = x.shape
    lo_h, hi_h, s_h = _sample_window(h, stride, offset, out_h)
    lo_w, hi_w, s_w = _sample_window(w, stride, offset, out_w)
    if lo_h or hi_h or lo_w or hi_w:
        x = np.pad(x, ((0, 0), (0, 0), (lo_h, hi_h), (lo_w, hi_w)))
    return np.ascontiguousarray(
        x[:, :, s_h:s_h + stride * (out_h - 1) + 1:stride, s_w:s_w + stride * (out_w - 1) + 1:stride])


def _scatter_grid(g: np.ndarray, shape, stride: int, offset: int) -> np.ndarray:
    """Adjoint of :func:`sample_grid`."""
    b, c, h, w = shape
    out_h, out_w = g.shape[2], g.shape[3]
    lo_h, hi_h, s_h = _sample_window(h, stride, offset, out_h)
    lo_w, hi_w, s_w = _sample_window(w, stride, offset, out_w)
    full = np.zeros((b, c, h + lo_h + hi_h, w + lo_w + hi_w), dtype=g.dtype)
    full[:, :, s_h:s_h + stride * (out_h - 1) + 1:stride, s_w:s_w + stride * (out_w - 1) + 1:stride] = g
    return np.ascontiguousarray(full[:, :, lo_h:lo_h + h, lo_w:lo_w + w])


def _grouped(x, weights, groups, k, stride, padding):
    """K x K grouped cross-correlation; weights (N, M/G, K, K)."""
    b, m, h, w = x.shape
    n = weights.shape[0]
    ho, wo = output_extent(h, k, stride, padding), output_extent(w, k, stride, padding)
    cols = im2col(x, k, stride, padding)
    mg, ng = m // groups, n // groups
    rows = mg * k * k
    out = np.empty((n, b * ho * wo), dtype=x.dtype)
    for g in range(groups):
        wg = weights[g * ng:(g + 1) * ng].reshape(ng, rows)
        out[g * ng:(g + 1) * ng] = gemm(wg, cols[g * rows:(g + 1) * rows])
    return _from_matrix(out, b, ho, wo)


def _grouped_backward(x, weights, groups, k, stride, padding, d_out):
    b, m, h, w = x.shape
    n = weights.shape[0]
    cols = im2col(x, k, stride, padding)
    d_mat = _to_matrix(d_out)
    mg, ng = m // groups, n // groups
    rows = mg * k * k
    d_w = np.empty_like(weights)
    d_cols = np.empty_like(cols)
    for g in range(groups):
        dg = d_mat[g * ng:(g + 1) * ng]
        cg = cols[g * rows:(g + 1) * rows]
        wg = weights[g * ng:(g + 1) * ng].reshape(ng, rows)
        d_w[g * ng:(g + 1) * ng] = gemm(dg, cg.T).reshape(ng, mg, k, k)
        d_cols[g * rows:(g + 1) * rows] = gemm(wg.T, dg)
    return col2im(d_cols, x.shape, k, stride, padding), d_w


# -- forward ------------------------------------------------------------------

def forward_standard(x: np.ndarray, w: FilterBank, spec: ConvSpec) -> np.ndarray:
    _expect(spec, ConvKind.STANDARD)
    _check_input(x, spec, w)
    return _grouped(x, w.spatial, 1, spec.kernel_size, spec.stride, spec.padding)


def forward_group(x: np.ndarray, w: FilterBank, spec: ConvSpec) -> np.ndarray:
    """Grouped K x K branch; also accepts a Dual spec (evaluates its K x K branch only)."""
    _expect(spec, ConvKind.GROUP, ConvKind.DUAL)
    check_tensor(x, "input")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if w.spatial.shape != spec.spatial_shape:
        raise SpecError(f"spatial block {w.spatial.shape} != expected {spec.spatial_shape}")
    same_precision(x, w.spatial)
    return _grouped(x, w.spatial, spec.groups, spec.kernel_size, spec.stride, spec.padding)


def forward_pointwise(x: np.ndarray, weights: np.ndarray, stride: int = 1,
                      offset: int = 0, out_hw: tuple[int, int] | None = None) -> np.ndarray:
    """1 x 1 convolution: ``out[b,n,y,x] = sum_m w[n,m] * x[b,m,offset+y*stride,offset+x*stride]``.

    With the defaults the output covers ``floor((H-1)/stride)+1`` rows; ``offset`` and
    ``out_hw`` exist so the branch can be aligned with a K x K branch.
    """
    check_tensor(x, "input")
    weights = np.asarray(weights)
    if weights.ndim == 4 and weights.shape[2:] == (1, 1):
        weights = weights[:, :, 0, 0]
    if weights.ndim != 2 or weights.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise weights {weights.shape} do not match {x.shape[1]} input channels")
    same_precision(x, weights)
    b, m, h, w = x.shape
    if out_hw is None:
        out_hw = ((h - 1) // stride + 1, (w - 1) // stride + 1)
    xs = sample_grid(x, stride, offset, *out_hw)
    return _from_matrix(gemm(weights, _to_matrix(xs)), b, *out_hw)


def forward_dual(x: np.ndarray, w: FilterBank, spec: ConvSpec) -> np.ndarray:
    """Grouped K x K branch plus full 1 x 1 branch over all input channels, summed."""
    _expect(spec, ConvKind.DUAL)
    _check_input(x, spec, w)
    spatial = forward_group(x, w, spec)
    pw = forward_pointwise(x, w.pointwise, spec.stride, pointwise_offset(spec), spatial.shape[2:])
    if pw.shape != spatial.shape:
        raise GeometryError(f"branch outputs differ: {spatial.shape} vs {pw.shape}")
    return spatial + pw


def _het_dense_pointwise(w: FilterBank, spec: ConvSpec) -> np.ndarray:
    """Scatter the Het 1 x 1 block into an N x M matrix (zeros on K x K channels)."""
    M, N, P = spec.in_channels, spec.out_channels, spec.parts
    dense = np.zeros((N, M), dtype=w.pointwise.dtype)
    for r in range(P):
        _, pw_idx = het_channels(M, P, r)
        dense[r::P][:, pw_idx] = w.pointwise[r::P]
    return dense


def forward_het(x: np.ndarray, w: FilterBank, spec: ConvSpec) -> np.ndarray:
    _expect(spec, ConvKind.HET)
    _check_input(x, spec, w)
    P, K = spec.parts, spec.kernel_size
    b = x.shape[0]
    ho, wo = spec.output_hw(x.shape[2], x.shape[3])
    out = np.empty((spec.out_channels, b * ho * wo), dtype=x.dtype)
    # filters n = r (mod P) share the K x K channel set c = r (mod P); with N < P some classes are empty
    for r in range(min(P, spec.out_channels)):
        cols = im2col(np.ascontiguousarray(x[:, r::P]), K, spec.stride, spec.padding)
        wr = w.spatial[r::P]
        out[r::P] = gemm(wr.reshape(wr.shape[0], -1), cols)
    xs = sample_grid(x, spec.stride, pointwise_offset(spec), ho, wo)
    out += gemm(_het_dense_pointwise(w, spec), _to_matrix(xs))
    return _from_matrix(out, b, ho, wo)


def forward_depthwise_separable(x: np.ndarray, w: FilterBank, spec: ConvSpec) -> np.ndarray:
    _expect(spec, ConvKind.DEPTHWISE_SEPARABLE)
    _check_input(x, spec, w)
    mid = _grouped(x, w.spatial, spec.in_channels, spec.kernel_size, spec.stride, spec.padding)
    return forward_pointwise(mid, w.pointwise)


_FORWARD = {
    ConvKind.STANDARD: forward_standard,
    ConvKind.GROUP: forward_group,
    ConvKind.DUAL: forward_dual,
    ConvKind.HET: forward_het,
    ConvKind.DEPTHWISE_SEPARABLE: forward_depthwise_separable,
}


def forward(x: np.ndarray, w: FilterBank, spec: ConvSpec) -> np.ndarray:
    """Dispatch to the fast path for ``spec.kind``."""
    return _FORWARD[spec.kind](x, w, spec)


# -- backward -------------------------------------------------------------------

def _pointwise_backward(x, weights, stride, offset, d_out):
    xs = sample_grid(x, stride, offset, d_out.shape[2], d_out.shape[3])
    d_mat = _to_matrix(d_out)
    d_w = gemm(d_mat, _to_matrix(xs).T)
    d_xs = _from_matrix(gemm(weights.T, d_mat), *xs.shape[:1], *xs.shape[2:])
    return _scatter_grid(d_xs, x.shape, stride, offset), d_w


def backward(x: np.ndarray, w: FilterBank, spec: ConvSpec, d_output: np.ndarray) -> ConvGradients:
    """Exact gradients of ``forward(x, w, spec)`` contracted with ``d_output``."""
    _check_input(x, spec, w)
    ho, wo = spec.output_hw(x.shape[2], x.shape[3])
    expected = (x.shape[0], spec.out_channels, ho, wo)
    if d_output.shape != expected:
        raise ShapeError(f"d_output shape {d_output.shape} != forward output {expected}")
    same_precision(x, d_output)
    K, s, p = spec.kernel_size, spec.stride, spec.padding
    kind = spec.kind

    if kind is ConvKind.STANDARD:
        d_x, d_s = _grouped_backward(x, w.spatial, 1, K, s, p, d_output)
        return ConvGradients(d_x, d_s)
    if kind is ConvKind.GROUP:
        d_x, d_s = _grouped_backward(x, w.spatial, spec.groups, K, s, p, d_output)
        return ConvGradients(d_x, d_s)
    if kind is ConvKind.DUAL:
        d_x1, d_s = _grouped_backward(x, w.spatial, spec.groups, K, s, p, d_output)
        d_x2, d_pw = _pointwise_backward(x, w.pointwise, s, pointwise_offset(spec), d_output)
        return ConvGradients(d_x1 + d_x2, d_s, d_pw)
    if kind is ConvKind.HET:
        P, M = spec.parts, spec.in_channels
        d_mat = _to_matrix(d_output)
        d_s = np.empty_like(w.spatial)
        d_x = np.zeros_like(x)
        for r in range(min(P, spec.out_channels)):
            xr = np.ascontiguousarray(x[:, r::P])
            cols = im2col(xr, K, s, p)
            wr = w.spatial[r::P]
            wr_mat = wr.reshape(wr.shape[0], -1)
            dr = d_mat[r::P]
            d_s[r::P] = gemm(dr, cols.T).reshape(wr.shape)
            d_x[:, r::P] += col2im(gemm(wr_mat.T, dr), xr.shape, K, s, p)
        dense = _het_dense_pointwise(w, spec)
        d_x2, d_dense = _pointwise_backward(x, dense, s, pointwise_offset(spec), d_output)
        d_pw = np.empty_like(w.pointwise)
        for r in range(P):
            _, pw_idx = het_channels(M, P, r)
            d_pw[r::P] = d_dense[r::P][:, pw_idx]
        return ConvGradients(d_x + d_x2, d_s, d_pw)
    # depthwise separable: recompute the depthwise stage output
    mid = _grouped(x, w.spatial, spec.in_channels, K, s, p)
    d_mid, d_pw = _pointwise_backward(mid, w.pointwise, 1, 0, d_output)
    d_x, d_s = _grouped_backward(x, w.spatial, spec.in_channels, K, s, p, d_mid)
    return ConvGradients(d_x, d_s, d_pw)


# -- direct-loop oracle -------------------------------------------------------

class MacCounter:
    """Counts multiply-accumulates performed by :func:`reference_direct` (all images)."""

    def __init__(self):
        self.macs = 0


def _taps(spec: ConvSpec, w: FilterBank, n: int):
    """Yield (channel, ky, kx, weight) for every kernel tap of filter ``n``."""
    M, K = spec.in_channels, spec.kernel_size
    centre = (K - 1) // 2
    kind = spec.kind
    if kind is ConvKind.STANDARD:
        chans = [(c, w.spatial[n, c]) for c in range(M)]
    elif kind in (ConvKind.GROUP, ConvKind.DUAL):
        mg = M // spec.groups
        g = n // (spec.out_channels // spec.groups)
        chans = [(g * mg + j, w.spatial[n, j]) for j in range(mg)]
    elif kind is ConvKind.HET:
        sp_idx, _ = het_channels(M, spec.parts, n)
        chans = [(int(c), w.spatial[n, j]) for j, c in enumerate(sp_idx)]
    else:
        raise SpecError("depthwise separable taps are produced stage by stage")
    for c, kernel in chans:
        for ky in range(K):
            for kx in range(K):
                yield c, ky, kx, float(kernel[ky, kx])
    if kind is ConvKind.DUAL:
        for c in range(M):
            yield c, centre, centre, float(w.pointwise[n, c])
    elif kind is ConvKind.HET:
        _, pw_idx = het_channels(M, spec.parts, n)
        for j, c in enumerate(pw_idx):
            yield int(c), centre, centre, float(w.pointwise[n, j])


def _direct(xp, taps_for, n_out, ho, wo, stride, counter):
    b = xp.shape[0]
    out = np.zeros((b, n_out, ho, wo), dtype=np.float64)
    for n in range(n_out):
        acc = out[:, n]
        for c, ky, kx, wv in taps_for(n):
            acc += wv * xp[:, c, ky:ky + stride * (ho - 1) + 1:stride, kx:kx + stride * (wo - 1) + 1:stride]
            if counter is not None:
                counter.macs += b * ho * wo
    return out


def reference_direct(x: np.ndarray, w: FilterBank, spec: ConvSpec,
                     counter: MacCounter | None = None) -> np.ndarray:
    """Loop-over-taps evaluation with float64 accumulation; no im2col, no GEMM.

    Loops run over output filters, input channels and kernel taps; each tap adds a
    strided slice of the padded input (vectorised over batch and pixels only).
    The result is cast back to the input precision.
    """
    _check_input(x, spec, w)
    K, s = spec.kernel_size, spec.stride
    ho, wo = spec.output_hw(x.shape[2], x.shape[3])
    xp = pad_spatial(x.astype(np.float64), spec.padding)
    if spec.kind is ConvKind.DEPTHWISE_SEPARABLE:
        def depthwise_taps(c):
            for ky in range(K):
                for kx in range(K):
                    yield c, ky, kx, float(w.spatial[c, 0, ky, kx])
        mid = _direct(xp, depthwise_taps, spec.in_channels, ho, wo, s, counter)

        def pointwise_taps(n):
            for c in range(spec.in_channels):
                yield c, 0, 0, float(w.pointwise[n, c])
        out = _direct(mid, pointwise_taps, spec.out_channels, ho, wo, 1, counter)
    else:
        out = _direct(xp, lambda n: _taps(spec, w, n), spec.out_channels, ho, wo, s, counter)
    return out.astype(x.dtype)


# -- serialization ----------------------------------------------------------------

def write_filters(fh: BinaryIO, spec: ConvSpec, w: FilterBank) -> None:
    w.validate(spec)
    fh.write(WEIGHT_MAGIC)
    fh.write(struct.pack("<8q", spec.kind.tag, spec.in_channels, spec.out_channels,
                         spec.kernel_size, spec.stride, spec.padding,
                         spec.groups or 0, spec.parts or 0))
    write_tensor(fh, w.spatial)
    if w.pointwise is not None:
        write_tensor(fh, w.pointwise.reshape(*w.pointwise.shape, 1, 1))


def read_filters(fh: BinaryIO) -> tuple[ConvSpec, FilterBank]:
    magic = fh.read(8)
    if magic != WEIGHT_MAGIC:
        raise FormatError(f"bad weight magic {magic!r}")
    raw = fh.read(64)
    if len(raw) != 64:
        raise FormatError("truncated weight header")
    tag, M, N, K, s, p, G, P = struct.unpack("<8q", raw)
    spec = ConvSpec(ConvKind.from_tag(tag), M, N, K, s, p, G or None, P or None)
    spatial = read_tensor(fh)
    pointwise = None
    if spec.pointwise_shape is not None:
        pointwise = read_tensor(fh)[:, :, 0, 0].copy()
    bank = FilterBank(spatial, pointwise)
    bank.validate(spec)
    return spec, bank


def filters_to_bytes(spec: ConvSpec, w: FilterBank) -> bytes:
    buf = io.BytesIO()
    write_filters(buf, spec, w)
    return buf.getvalue()


def filters_from_bytes(data: bytes) -> tuple[ConvSpec, FilterBank]:
    return read_filters(io.BytesIO(data))
