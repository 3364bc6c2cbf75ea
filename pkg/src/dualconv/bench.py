"""Single-threaded wall-clock benchmarks of layers and whole-model forward passes.

Times come from ``time.perf_counter_ns``; summaries are the median and the
median absolute deviation. BLAS pools are limited to one thread and the run
is refused if any pool still reports more. The environment variable
``DUALCONV_BENCH_MAX_SECONDS`` caps the measuring time of one benchmark
(measurement stops early once at least 10 runs are in).
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import kernels
from .cost import layer_cost_hw, model_cost
from .errors import ConfigError, DualConvError
from .graph import ModelConfig
from .kernels import ConvSpec
from .network import instantiate
from .tensor import gemm_mode, seeded_random

MIN_RUNS = 10
MAX_SECONDS_ENV = "DUALCONV_BENCH_MAX_SECONDS"


class BenchError(DualConvError):
    """Benchmark preconditions not met."""


@dataclass(frozen=True)
class BenchResult:
    spec_id: str
    warmup: int
    runs: int
    times_ns: tuple[int, ...]
    median_ns: float
    mad_ns: float
    macs: int
    macs_per_second: float
    gemm_variant: str = "tiled"

    @property
    def median_ms(self) -> float:
        return self.median_ns / 1e6


def summarize(spec_id: str, warmup: int, times_ns, macs: int, variant: str) -> BenchResult:
    times = tuple(int(t) for t in times_ns)
    med = statistics.median(times)
    mad = statistics.median(abs(t - med) for t in times)
    rate = macs / (med / 1e9) if med > 0 else float("inf")
    return BenchResult(spec_id, warmup, len(times), times, float(med), float(mad), macs, rate, variant)


@contextlib.contextmanager
def single_threaded():
    """Limit every BLAS/OpenMP pool to one thread; refuse if any pool ignores the limit."""
    with threadpool_limits(limits=1):
        busy = [p for p in threadpool_info() if p.get("num_threads", 1) != 1]
        if busy:
            names = ", ".join(f"{p.get('internal_api')}={p.get('num_threads')}" for p in busy)
            raise BenchError(f"intra-op parallelism still enabled ({names}); refusing to benchmark")
        yield


def _budget_s() -> float | None:
    raw = os.environ.get(MAX_SECONDS_ENV)
    if not raw:
        return None
    try:
        return float(raw)
    except ValueError:
        raise BenchError(f"{MAX_SECONDS_ENV} must be a number, got {raw!r}") from None


def _check_counts(warmup: int, runs: int) -> None:
    if runs < MIN_RUNS:
        raise BenchError(f"runs must be >= {MIN_RUNS}")
    if warmup < 0:
        raise BenchError("warmup must be >= 0")


def spec_id(spec: ConvSpec, shape) -> str:
    gp = spec.group_or_part
    extra = "" if gp is None else f"-{'P' if spec.parts else 'G'}{gp}"
    return (f"{spec.kind.value}{extra}-M{spec.in_channels}-N{spec.out_channels}-K{spec.kernel_size}"
            f"-s{spec.stride}-p{spec.padding}-in{'x'.join(map(str, shape))}")


def bench_layer(spec: ConvSpec, input_shape, warmup: int = 3, runs: int = MIN_RUNS, seed: int = 0,
                variant: str = "tiled", precision=32, tile: int = 256) -> BenchResult:
    """Time ``kernels.forward`` on a fixed seeded input; ``input_shape`` is (B, M, H, W)."""
    _check_counts(warmup, runs)
    input_shape = tuple(input_shape)
    if input_shape[1] != spec.in_channels:
        raise BenchError(f"input has {input_shape[1]} channels, spec expects {spec.in_channels}")
    x = seeded_random(input_shape, seed, precision)
    bank = kernels.init_filters(spec, seed + 1, precision)
    ho, wo = spec.output_hw(input_shape[2], input_shape[3])
    macs = layer_cost_hw(spec, ho, wo).total.flops * input_shape[0]
    budget = _budget_s()
    times = []
    with single_threaded(), gemm_mode(variant, tile):
        for _ in range(warmup):
            kernels.forward(x, bank, spec)
        start = time.perf_counter()
        for _ in range(runs):
            t0 = time.perf_counter_ns()
            kernels.forward(x, bank, spec)
            times.append(time.perf_counter_ns() - t0)
            if budget is not None and len(times) >= MIN_RUNS and time.perf_counter() - start > budget:
                break
    return summarize(spec_id(spec, input_shape), warmup, times, macs, variant)


def layer_output(spec: ConvSpec, input_shape, seed: int = 0, variant: str = "tiled", precision=32,
                 tile: int = 256) -> np.ndarray:
    """The tensor ``bench_layer`` computes, for numeric cross-checks."""
    x = seeded_random(tuple(input_shape), seed, precision)
    bank = kernels.init_filters(spec, seed + 1, precision)
    with gemm_mode(variant, tile):
        return kernels.forward(x, bank, spec)


@dataclass(frozen=True)
class ModelBench:
    model: str
    total: BenchResult
    layers: dict[str, BenchResult] = field(default_factory=dict)


def bench_model(config: ModelConfig, warmup: int = 2, runs: int = MIN_RUNS, seed: int = 0,
                variant: str = "tiled", precision=32, tile: int = 256) -> ModelBench:
    """End-to-end forward time at batch 1 plus per-layer times taken inside the same runs."""
    _check_counts(warmup, runs)
    if not config.layers:
        raise ConfigError(f"model {config.name!r} has no layers to benchmark")
    cost = model_cost(config)
    net = instantiate(config, seed, precision)
    x = seeded_random((1, *config.input_shape[1:]), seed, precision)
    per_layer: dict[str, list[int]] = {}
    totals = []
    budget = _budget_s()
    with single_threaded(), gemm_mode(variant, tile):
        for _ in range(warmup):
            net.forward(x)
        start = time.perf_counter()
        for _ in range(runs):
            layer_ns: dict[str, int] = {}
            t0 = time.perf_counter_ns()
            net.forward(x, layer_ns=layer_ns)
            totals.append(time.perf_counter_ns() - t0)
            for name, t in layer_ns.items():
                per_layer.setdefault(name, []).append(t)
            if budget is not None and len(totals) >= MIN_RUNS and time.perf_counter() - start > budget:
                break
    layer_macs = {l.name: l.flops for l in cost.layers}
    layers = {name: summarize(name, warmup, ts, layer_macs.get(name, 0), variant)
              for name, ts in per_layer.items()}
    return ModelBench(config.name, summarize(config.name, warmup, totals, cost.flops, variant), layers)


# -- output ---------------------------------------------------------------------

BENCH_COLUMNS = ("spec_id", "gemm_variant", "warmup", "runs", "median_ns", "mad_ns", "macs", "macs_per_second")


def results_to_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in results:
        w.writerow([getattr(r, c) for c in BENCH_COLUMNS])
    return buf.getvalue()


def results_to_json(results) -> str:
    return json.dumps([asdict(r) for r in results], indent=2)
