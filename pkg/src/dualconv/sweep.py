"""Randomised operator sweeps: fast path vs direct oracle, Dual decomposition, MAC counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cost import layer_cost_hw
from .kernels import ConvKind, ConvSpec, MacCounter
from .tensor import max_abs_diff, seeded_random

ALL_KINDS = tuple(ConvKind)
TOLERANCE = {32: 1e-5, 64: 1e-12}
_DIVISORS = (1, 2, 4, 8, 16, 32)


@dataclass(frozen=True)
class Case:
    spec: ConvSpec
    input_shape: tuple[int, int, int, int]
    seed: int


def random_case(rng: np.random.Generator, kinds=ALL_KINDS, g: int | None = None, max_channels: int = 32,
                max_spatial: int = 16, kernel_sizes=(1, 3, 5), strides=(1, 2), paddings=(0, 1, 2)) -> Case:
    kind = kinds[rng.integers(len(kinds))]
    k = int(rng.choice(kernel_sizes))
    s = int(rng.choice(strides))
    p = int(rng.choice(paddings))
    lo = max(1, k - 2 * p)
    h = int(rng.integers(lo, max_spatial + 1))
    w = int(rng.integers(lo, max_spatial + 1))
    groups = parts = None
    if kind in (ConvKind.GROUP, ConvKind.DUAL, ConvKind.HET):
        d = g if g is not None else int(rng.choice([x for x in _DIVISORS if x <= max_channels]))
        m = d * int(rng.integers(1, max_channels // d + 1))
        if kind is ConvKind.HET:
            parts = d
            n = int(rng.integers(1, max_channels + 1))
        else:
            groups = d
            n = d * int(rng.integers(1, max_channels // d + 1))
    else:
        m = int(rng.integers(1, max_channels + 1))
        n = int(rng.integers(1, max_channels + 1))
    b = int(rng.integers(1, 3))
    return Case(ConvSpec(kind, m, n, k, s, p, groups, parts), (b, m, h, w), int(rng.integers(2**31)))


def sweep_cases(seed: int, count: int, kinds=ALL_KINDS, g: int | None = None, **kw) -> list[Case]:
    """``count`` cases cycling through ``kinds`` so each kind gets an equal share."""
    rng = np.random.default_rng(seed)
    kinds = tuple(kinds)
    return [random_case(rng, (kinds[i % len(kinds)],), g, **kw) for i in range(count)]


@dataclass
class CaseResult:
    case: Case
    oracle_diff: float
    macs_counted: int
    macs_model: int
    decomposition_diff: float | None = None


def run_case(case: Case, precision: int = 32) -> CaseResult:
    spec = case.spec
    x = seeded_random(case.input_shape, case.seed, precision)
    bank = kernels.init_filters(spec, case.seed + 1, precision)
    fast = kernels.forward(x, bank, spec)
    counter = MacCounter()
    ref = kernels.reference_direct(x, bank, spec, counter)
    ho, wo = spec.output_hw(case.input_shape[2], case.input_shape[3])
    macs_model = layer_cost_hw(spec, ho, wo).total.flops * case.input_shape[0]
    decomp = None
    if spec.kind is ConvKind.DUAL:
        branches = kernels.forward_group(x, bank, spec) + kernels.forward_pointwise(
            x, bank.pointwise, spec.stride, kernels.pointwise_offset(spec), (ho, wo))
        decomp = max_abs_diff(fast, branches)
    return CaseResult(case, max_abs_diff(fast, ref), counter.macs, macs_model, decomp)


@dataclass
class SweepReport:
    precision: int
    results: list[CaseResult] = field(default_factory=list)

    @property
    def tolerance(self) -> float:
        return TOLERANCE[self.precision]

    def max_by_kind(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for r in self.results:
            k = r.case.spec.kind.value
            out[k] = max(out.get(k, 0.0), r.oracle_diff)
        return out

    @property
    def max_oracle_diff(self) -> float:
        return max((r.oracle_diff for r in self.results), default=0.0)

    @property
    def max_decomposition_diff(self) -> float:
        return max((r.decomposition_diff for r in self.results if r.decomposition_diff is not None), default=0.0)

    @property
    def mac_mismatches(self) -> list[CaseResult]:
        return [r for r in self.results if r.macs_counted != r.macs_model]

    @property
    def passed(self) -> bool:
        return (self.max_oracle_diff <= self.tolerance and self.max_decomposition_diff <= self.tolerance
                and not self.mac_mismatches)


def run_sweep(seed: int = 0, count: int = 200, precision: int = 32, kinds=ALL_KINDS,
              g: int | None = None, **kw) -> SweepReport:
    report = SweepReport(precision)
    for case in sweep_cases(seed, count, kinds, g, **kw):
        report.results.append(run_case(case, precision))
    return report


def degeneracy_diffs(seed: int = 0, precision: int = 64) -> dict[str, float]:
    """Max deviations of the degenerate identities on one random geometry.

    * Dual(G=1) == Standard(spatial) + pointwise
    * Group(G=1) == Standard
    * Het(P=1) == Standard
    """
    rng = np.random.default_rng(seed)
    m, n, k = int(rng.integers(2, 9)), int(rng.integers(2, 9)), 3
    x = seeded_random((2, m, 7, 7), seed, precision)
    std = ConvSpec(ConvKind.STANDARD, m, n, k, 1, 1)
    bank = kernels.init_filters(ConvSpec(ConvKind.DUAL, m, n, k, 1, 1, 1), seed + 1, precision)
    std_out = kernels.forward_standard(x, kernels.FilterBank(bank.spatial), std)
    dual = kernels.forward_dual(x, bank, ConvSpec(ConvKind.DUAL, m, n, k, 1, 1, 1))
    pw = kernels.forward_pointwise(x, bank.pointwise)
    group = kernels.forward_group(x, kernels.FilterBank(bank.spatial), ConvSpec(ConvKind.GROUP, m, n, k, 1, 1, 1))
    het_bank = kernels.FilterBank(bank.spatial, np.zeros((n, 0), dtype=bank.spatial.dtype))
    het = kernels.forward_het(x, het_bank, ConvSpec(ConvKind.HET, m, n, k, 1, 1, None, 1))
    return {"dual_g1": max_abs_diff(dual, std_out + pw), "group_g1": max_abs_diff(group, std_out),
            "het_p1": max_abs_diff(het, std_out)}


@dataclass(frozen=True)
class CommunicationResult:
    kind: ConvKind
    filter_index: int
    channel: int
    change: float


def communication_probe(rng: np.random.Generator, kind: ConvKind, precision: int = 64) -> CommunicationResult:
    """Perturb one input channel outside a filter's group and measure that filter's output change."""
    g = int(rng.choice([2, 4, 8]))
    m = g * int(rng.integers(1, 5))
    n = g * int(rng.integers(1, 5))
    spec = ConvSpec(kind, m, n, 3, int(rng.choice([1, 2])), 1, g)
    x = seeded_random((1, m, 8, 8), int(rng.integers(2**31)), precision)
    bank = kernels.init_filters(spec, int(rng.integers(2**31)), precision)
    f = int(rng.integers(n))
    grp = f // (n // g)
    outside = [c for c in range(m) if c // (m // g) != grp]
    c = int(rng.choice(outside))
    x2 = x.copy()
    x2[:, c] += rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])
    before = kernels.forward(x, bank, spec)[:, f]
    after = kernels.forward(x2, bank, spec)[:, f]
    return CommunicationResult(kind, f, c, float(np.max(np.abs(after - before))))
