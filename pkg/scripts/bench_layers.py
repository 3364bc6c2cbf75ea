"""Single-threaded layer timings across operators and group counts, plus an optional model timing."""

import argparse
from dataclasses import dataclass
from pathlib import Path

from dualconv import bench
from dualconv.kernels import ConvKind, ConvSpec
from dualconv.policy import apply_policy, default_policy
from dualconv.zoo import build


@dataclass
class Config:
    channels: int = 256
    size: int = 28
    kernel: int = 3
    groups: tuple[int, ...] = (2, 4, 8, 16, 32)
    runs: int = 20
    model: str | None = None
    out: Path = Path("results/bench_layers.csv")


def main(cfg: Config) -> None:
    m, k = cfg.channels, cfg.kernel
    shape = (1, m, cfg.size, cfg.size)
    specs = [ConvSpec(ConvKind.STANDARD, m, m, k, 1, k // 2)]
    for g in cfg.groups:
        specs += [ConvSpec(ConvKind.GROUP, m, m, k, 1, k // 2, g), ConvSpec(ConvKind.DUAL, m, m, k, 1, k // 2, g)]
    results = []
    for spec in specs:
        r = bench.bench_layer(spec, shape, runs=cfg.runs)
        results.append(r)
        print(f"{r.spec_id:<44} {r.median_ms:8.3f} ms  MAD {r.mad_ns / 1e6:6.3f}")
    if cfg.model:
        for g in (None, 16, 32):
            conf = build(cfg.model, "cifar10")
            if g:
                conf = apply_policy(conf, default_policy(cfg.model, "cifar10", ConvKind.DUAL, g))
            mb = bench.bench_model(conf, runs=10)
            results.append(mb.total)
            print(f"{cfg.model} {'standard' if g is None else f'dual G{g}':<10} {mb.total.median_ms:9.2f} ms")
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    cfg.out.write_text(bench.results_to_csv(results), encoding="utf-8")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--channels", type=int, default=Config.channels)
    ap.add_argument("--size", type=int, default=Config.size)
    ap.add_argument("--runs", type=int, default=Config.runs)
    ap.add_argument("--model", help="also time a whole CIFAR model, e.g. vgg16")
    ap.add_argument("--out", type=Path, default=Config.out)
    a = ap.parse_args()
    main(Config(channels=a.channels, size=a.size, runs=a.runs, model=a.model, out=a.out))
