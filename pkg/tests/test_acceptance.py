"""Acceptance criteria 1-9, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` (or plain ``-v``; lines are
printed past output capture) or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import contextlib
import functools
import sys
import time
from fractions import Fraction

import numpy as np

from dualconv import cost, published, sweep
from dualconv.bench import bench_layer
from dualconv.kernels import ConvKind, ConvSpec
from dualconv.train import SyntheticTask, TrainConfig, end_to_end_gradcheck, layer_gradcheck, train
from dualconv.zoo import tiny


class _Printer:
    def disabled(self):
        return contextlib.nullcontext()


def report(capsys, number: int, ok: bool, detail: str, started: float) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}  [{time.perf_counter() - started:.1f}s]"
    with capsys.disabled():
        print(f"\n{line}", file=sys.stdout, flush=True)


@functools.lru_cache(maxsize=None)
def _sweep(precision: int, kinds=sweep.ALL_KINDS):
    return sweep.run_sweep(seed=2024, count=200, precision=precision, kinds=kinds)


# -- 1: ratio formulas ------------------------------------------------------------

def test_criterion_1_ratio_formulas(capsys):
    t0 = time.perf_counter()
    checked, bad = 0, []
    widths = [16 * 2 ** i for i in range(6)]  # 16 .. 512
    for k in (1, 3, 5):
        for gp in (1, 2, 4, 8, 16, 32):
            for n in widths:
                m = 512
                std = cost.flops_standard(1, k, m, n)
                oracle = {"het": Fraction(cost.flops_het(1, k, m, n, gp), std),
                          "dsc": Fraction(cost.flops_depthwise_separable(1, k, m, n), std)}
                got = {"het": cost.reduction_ratio("het", k, p=gp), "dsc": cost.reduction_ratio("dsc", k, n=n)}
                if n % gp == 0:  # Dual and Group need G | N
                    oracle["dual"] = Fraction(cost.flops_dual(1, k, m, n, gp).total.flops, std)
                    oracle["group"] = Fraction(cost.flops_group(1, k, m, n, gp), std)
                    got["dual"] = cost.reduction_ratio("dual", k, g=gp)
                    got["group"] = cost.reduction_ratio("group", k, g=gp)
                for name in oracle:
                    checked += 1
                    if got[name] != oracle[name]:
                        bad.append((name, k, gp, n))
    spots = (cost.reduction_ratio("dual", 3, g=4) == Fraction(13, 36),
             cost.reduction_ratio("group", 3, g=8) == Fraction(1, 8),
             cost.reduction_ratio("het", 3, p=4) == Fraction(1, 4) + Fraction(1, 9) - Fraction(1, 36) == Fraction(1, 3))
    ok = not bad and all(spots)
    report(capsys, 1, ok, f"{checked} exact ratios, {len(bad)} mismatches, spot values {spots}", t0)
    assert ok


# -- 2: published cost tables -----------------------------------------------------

def test_criterion_2_cost_tables(capsys):
    t0 = time.perf_counter()
    checks = published.check_all()
    gating = [c for c in checks if c.row.gating]
    failed = [c.row.label for c in gating if not c.passed]
    worst = max(gating, key=lambda c: max(c.flops_error, c.params_error or 0.0))
    elapsed = time.perf_counter() - t0
    ok = not failed and elapsed < 5
    worst_err = max(worst.flops_error, worst.params_error or 0.0)
    report(capsys, 2, ok, f"{len(gating) - len(failed)}/{len(gating)} gating rows within tolerance, "
                          f"worst {worst.row.label} {worst_err:.2%}; "
                          f"{len(checks) - len(gating)} non-gating reported", t0)
    assert not failed, failed
    assert elapsed < 5


# -- 3: operator equivalence ------------------------------------------------------

def test_criterion_3_operator_equivalence(capsys):
    t0 = time.perf_counter()
    r32, r64 = _sweep(32), _sweep(64)
    kinds = {r.case.spec.kind for r in r32.results}
    ok = (r32.max_oracle_diff <= 1e-5 and r64.max_oracle_diff <= 1e-12 and kinds == set(ConvKind)
          and len(r32.results) >= 200)
    report(capsys, 3, ok, f"{len(r32.results)}+{len(r64.results)} cases over {len(kinds)} kinds, "
                          f"max diff f32 {r32.max_oracle_diff:.2e}, f64 {r64.max_oracle_diff:.2e}", t0)
    assert ok


# -- 4: dual decomposition + degeneracies ---------------------------------------

def test_criterion_4_decomposition(capsys):
    t0 = time.perf_counter()
    full = _sweep(64)
    dual_only = _sweep(64, (ConvKind.DUAL,))
    decomposition = max(full.max_decomposition_diff, dual_only.max_decomposition_diff)
    degen = [sweep.degeneracy_diffs(seed, 64) for seed in range(10)]
    worst_degen = max(max(d.values()) for d in degen)
    ok = decomposition <= 1e-12 and worst_degen <= 1e-12
    report(capsys, 4, ok, f"decomposition max diff {decomposition:.2e} over "
                          f"{sum(r.decomposition_diff is not None for r in full.results + dual_only.results)} dual cases; "
                          f"degeneracies max {worst_degen:.2e}", t0)
    assert ok


# -- 5: cross-channel communication -----------------------------------------------

def test_criterion_5_communication(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    dual = [sweep.communication_probe(rng, ConvKind.DUAL) for _ in range(100)]
    group = [sweep.communication_probe(rng, ConvKind.GROUP) for _ in range(100)]
    dual_ok = all(p.change > 1e-9 for p in dual)
    group_ok = all(p.change == 0.0 for p in group)
    ok = dual_ok and group_ok
    report(capsys, 5, ok, f"dual: {sum(p.change > 1e-9 for p in dual)}/100 filters respond to out-of-group "
                          f"channels (min change {min(p.change for p in dual):.2e}); "
                          f"group: {sum(p.change == 0.0 for p in group)}/100 unaffected", t0)
    assert ok


# -- 6: gradients -----------------------------------------------------------------

LAYER_SPECS = (
    ConvSpec(ConvKind.STANDARD, 4, 6, 3, 1, 1),
    ConvSpec(ConvKind.GROUP, 4, 6, 3, 2, 1, 2),
    ConvSpec(ConvKind.DUAL, 4, 6, 3, 1, 1, 2),
    ConvSpec(ConvKind.DUAL, 4, 4, 5, 2, 2, 4),
    ConvSpec(ConvKind.HET, 4, 5, 3, 1, 1, None, 2),
    ConvSpec(ConvKind.DEPTHWISE_SEPARABLE, 4, 6, 3, 2, 1),
)


def test_criterion_6_gradients(capsys):
    t0 = time.perf_counter()
    errors = {f"{s.kind.value}-layer{i}": layer_gradcheck(s, i).max_rel_error for i, s in enumerate(LAYER_SPECS)}
    for name in ("tiny-all", "tiny-mixed"):
        errors[name] = end_to_end_gradcheck(tiny(name), 0).max_rel_error
    worst = max(errors, key=errors.get)
    ok = errors[worst] <= 1e-6
    report(capsys, 6, ok, f"{len(errors)} checks (f64, step 1e-5), worst {worst} rel. error {errors[worst]:.2e}", t0)
    assert ok


# -- 7: MAC counter vs cost model -------------------------------------------------

def test_criterion_7_mac_coherence(capsys):
    t0 = time.perf_counter()
    results = _sweep(32).results + _sweep(64).results
    mism = [r for r in results if r.macs_counted != r.macs_model]
    ok = not mism
    report(capsys, 7, ok, f"{len(results) - len(mism)}/{len(results)} specs: oracle MAC count == cost-model flops", t0)
    assert ok


# -- 8: toy training --------------------------------------------------------------

def test_criterion_8_toy_training(capsys):
    t0 = time.perf_counter()
    task, cfg = SyntheticTask(), TrainConfig(epochs=30, seed=0)
    first = train(tiny("tiny-dual"), task, cfg)
    second = train(tiny("tiny-dual"), task, cfg)
    acc = first.final_accuracy
    deterministic = first.history == second.history
    ok = acc >= 0.95 and deterministic and len(first.history) == 30
    report(capsys, 8, ok, f"3 Dual conv layers + FC, 30 epochs: held-out accuracy {acc:.4f}, "
                          f"repeat run identical: {deterministic}", t0)
    assert ok


# -- 9: speed direction -----------------------------------------------------------

def test_criterion_9_speed_direction(capsys):
    t0 = time.perf_counter()
    shape = (1, 256, 28, 28)
    medians = {"std": bench_layer(ConvSpec(ConvKind.STANDARD, 256, 256, 3, 1, 1), shape, runs=15).median_ns}
    for g in (4, 8, 16, 32):
        medians[f"G{g}"] = bench_layer(ConvSpec(ConvKind.DUAL, 256, 256, 3, 1, 1, g), shape, runs=15).median_ns
    ok = medians["G4"] < medians["std"] and medians["G8"] < medians["std"]
    order = "G32 faster than G16" if medians["G32"] < medians["G16"] else "G16 faster than G32"
    text = ", ".join(f"{k} {v / 1e6:.2f}ms" for k, v in medians.items())
    report(capsys, 9, ok, f"median forward {text}; reported ordering: {order}", t0)
    assert ok


if __name__ == "__main__":
    failures = 0
    for name, fn in sorted((n, f) for n, f in globals().items() if n.startswith("test_criterion_")):
        try:
            fn(_Printer())
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
