"""Closed-form FLOP and parameter counts.

One FLOP is one multiply-accumulate. Convolution counts are bias-free; model
totals add fully connected layers (in x out MACs and weights) plus the
structural per-channel scalars of layers flagged ``bn`` (2 per channel) or
``bias`` (1 per channel), which never contribute FLOPs. Pooling, activations
and normalisation are free.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

from .errors import ConfigError, SpecError
from .graph import FC, Conv, ModelConfig, infer_shapes
from .kernels import ConvKind, ConvSpec


@dataclass(frozen=True)
class LayerCost:
    flops: int
    params: int

    def __post_init__(self):
        if self.flops < 0 or self.params < 0:
            raise ValueError("costs are non-negative")

    def __add__(self, other: "LayerCost") -> "LayerCost":
        return LayerCost(self.flops + other.flops, self.params + other.params)


ZERO = LayerCost(0, 0)


@dataclass(frozen=True)
class CostBreakdown:
    """Dual layers split into the grouped-plus-in-group-1x1 part and the out-of-group 1x1 part.

    Other kinds report everything in ``combined_branch``.
    """
    combined_branch: LayerCost
    pointwise_branch: LayerCost
    total: LayerCost


def _positive(**kw) -> None:
    for name, v in kw.items():
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise SpecError(f"{name} must be a positive integer, got {v!r}")


def _divides(d: int, name: str, **kw) -> None:
    for what, v in kw.items():
        if v % d:
            raise SpecError(f"{name}={d} does not divide {what}={v}")


def flops_standard(d_out: int, k: int, m: int, n: int) -> int:
    _positive(D_o=d_out, K=k, M=m, N=n)
    return d_out * d_out * k * k * m * n


def flops_group(d_out: int, k: int, m: int, n: int, g: int) -> int:
    _positive(D_o=d_out, K=k, M=m, N=n, G=g)
    _divides(g, "G", M=m, N=n)
    return d_out * d_out * k * k * (m // g) * n


def flops_dual(d_out: int, k: int, m: int, n: int, g: int) -> CostBreakdown:
    _positive(D_o=d_out, K=k, M=m, N=n, G=g)
    _divides(g, "G", M=m, N=n)
    area = d_out * d_out
    combined_f = area * (k * k + 1) * m * n // g
    pointwise_f = area * m * n - area * m * n // g
    combined_p = (k * k + 1) * m * n // g
    pointwise_p = m * n - m * n // g
    return CostBreakdown(LayerCost(combined_f, combined_p), LayerCost(pointwise_f, pointwise_p),
                         LayerCost(combined_f + pointwise_f, combined_p + pointwise_p))


def flops_depthwise_separable(d_out: int, k: int, m: int, n: int) -> int:
    _positive(D_o=d_out, K=k, M=m, N=n)
    return d_out * d_out * (k * k * m + m * n)


def flops_het(d_out: int, k: int, m: int, n: int, p: int) -> int:
    _positive(D_o=d_out, K=k, M=m, N=n, P=p)
    _divides(p, "P", M=m)
    return d_out * d_out * _het_weights(k, m, n, p)


def _het_weights(k, m, n, p):
    return (m // p) * n * k * k + (m - m // p) * n


def reduction_ratio(kind: ConvKind | str, k: int, g: int | None = None, p: int | None = None,
                    n: int | None = None) -> Fraction:
    """Operator FLOPs over standard FLOPs at equal geometry, as an exact fraction."""
    kind = ConvKind.parse(kind) if isinstance(kind, str) else kind
    _positive(K=k)
    inv_k2 = Fraction(1, k * k)
    if kind is ConvKind.STANDARD:
        return Fraction(1)
    if kind is ConvKind.DUAL:
        _require(g, "G", kind)
        return Fraction(1, g) + inv_k2
    if kind is ConvKind.GROUP:
        _require(g, "G", kind)
        return Fraction(1, g)
    if kind is ConvKind.HET:
        _require(p, "P", kind)
        return Fraction(1, p) + inv_k2 - Fraction(1, p * k * k)
    _require(n, "N", kind)
    return Fraction(1, n) + inv_k2


def _require(v, name, kind):
    if v is None:
        raise SpecError(f"{kind.value} ratio needs {name}")
    _positive(**{name: v})


def params_layer(spec: ConvSpec) -> int:
    M, N, K = spec.in_channels, spec.out_channels, spec.kernel_size
    kind = spec.kind
    if kind is ConvKind.STANDARD:
        return K * K * M * N
    if kind is ConvKind.GROUP:
        return K * K * (M // spec.groups) * N
    if kind is ConvKind.DUAL:
        return K * K * (M // spec.groups) * N + M * N
    if kind is ConvKind.HET:
        return _het_weights(K, M, N, spec.parts)
    return K * K * M + M * N


def layer_cost(spec: ConvSpec, d_out: int) -> CostBreakdown:
    """FLOPs for a layer producing a ``d_out`` x ``d_out`` map (square outputs)."""
    return layer_cost_hw(spec, d_out, d_out)


def layer_cost_hw(spec: ConvSpec, h_out: int, w_out: int) -> CostBreakdown:
    params = params_layer(spec)
    if spec.kind is ConvKind.DUAL:
        b = flops_dual(1, spec.kernel_size, spec.in_channels, spec.out_channels, spec.groups)
        area = h_out * w_out
        comb, pw = b.combined_branch, b.pointwise_branch
        return CostBreakdown(LayerCost(comb.flops * area, comb.params),
                             LayerCost(pw.flops * area, pw.params),
                             LayerCost((comb.flops + pw.flops) * area, params))
    total = LayerCost(params * h_out * w_out, params)
    return CostBreakdown(total, ZERO, total)


@dataclass(frozen=True)
class LayerReport:
    name: str
    op: str
    kind: str
    out_shape: tuple[int, int, int]
    breakdown: CostBreakdown
    structural_params: int

    @property
    def flops(self) -> int:
        return self.breakdown.total.flops

    @property
    def params(self) -> int:
        return self.breakdown.total.params + self.structural_params


@dataclass(frozen=True)
class ModelCost:
    name: str
    layers: tuple[LayerReport, ...]

    @property
    def flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def weight_params(self) -> int:
        """Parameters without batch-norm and bias scalars."""
        return sum(l.breakdown.total.params for l in self.layers)

    @property
    def conv_flops(self) -> int:
        return sum(l.flops for l in self.layers if l.op == "conv")


def model_cost(config: ModelConfig) -> ModelCost:
    """Per-layer costs and totals; raises ConfigError on inconsistent geometry."""
    shapes = infer_shapes(config)
    reports = []
    for layer, (_, out) in zip(config.layers, shapes):
        if isinstance(layer, Conv):
            n = layer.spec.out_channels
            # a depthwise-separable layer normalises after both of its stages
            bn_ch = n + (layer.spec.in_channels if layer.spec.kind is ConvKind.DEPTHWISE_SEPARABLE else 0)
            extra = (2 * bn_ch if layer.bn else 0) + (n if layer.bias else 0)
            reports.append(LayerReport(layer.name, "conv", layer.spec.kind.value, out,
                                       layer_cost_hw(layer.spec, out[1], out[2]), extra))
        elif isinstance(layer, FC):
            c = LayerCost(layer.in_features * layer.out_features, layer.in_features * layer.out_features)
            reports.append(LayerReport(layer.name, "fc", "fc", out, CostBreakdown(c, ZERO, c),
                                       layer.out_features if layer.bias else 0))
    if not reports:
        raise ConfigError(f"model {config.name!r} has no conv or fc layers")
    return ModelCost(config.name, tuple(reports))


# -- formatting and reports ------------------------------------------------------

_UNITS = ((10 ** 9, "G"), (10 ** 6, "M"), (10 ** 3, "K"))


def human(count: int) -> str:
    """Integer count in K/M/G units, rounded half-to-even to two decimals."""
    for scale, unit in _UNITS:
        if abs(count) >= scale:
            q = (Decimal(count) / Decimal(scale)).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)
            return f"{q}{unit}"
    return str(count)


def parse_human(text: str) -> float:
    """Inverse of :func:`human` for table strings such as ``"313.21M"``."""
    text = text.strip()
    for scale, unit in _UNITS:
        if text.endswith(unit):
            return float(text[:-1]) * scale
    return float(text)


REPORT_COLUMNS = ("model", "variant", "G_or_P", "flops_mac", "params", "ratio_vs_standard")


@dataclass(frozen=True)
class ReportRow:
    model: str
    variant: str
    G_or_P: int | None
    flops_mac: int
    params: int
    ratio_vs_standard: float


def rows_to_csv(rows, extra_columns: tuple[str, ...] = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS + tuple(extra_columns))
    for r in rows:
        d = r if isinstance(r, dict) else asdict(r)
        writer.writerow(["" if d.get(c) is None else d.get(c) for c in REPORT_COLUMNS + tuple(extra_columns)])
    return buf.getvalue()


def rows_to_json(rows) -> str:
    return json.dumps([r if isinstance(r, dict) else asdict(r) for r in rows], indent=2)


def layer_table(cost: ModelCost) -> str:
    """Plain-text per-layer listing."""
    lines = [f"{'layer':<24}{'op':<6}{'kind':<7}{'out':>16}{'flops':>14}{'params':>12}"]
    for l in cost.layers:
        shape = "x".join(map(str, l.out_shape))
        lines.append(f"{l.name:<24}{l.op:<6}{l.kind:<7}{shape:>16}{l.flops:>14}{l.params:>12}")
    lines.append(f"{'total':<53}{cost.flops:>14}{cost.params:>12}")
    return "\n".join(lines)
