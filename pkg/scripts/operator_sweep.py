"""Randomised fast-path vs oracle sweep in both precisions, with per-kind maxima."""

import argparse
import json
from dataclasses import dataclass
from pathlib import Path

from dualconv import sweep


@dataclass
class Config:
    seed: int = 0
    cases: int = 500
    out: Path | None = None


def main(cfg: Config) -> int:
    summary = {}
    ok = True
    for precision in (32, 64):
        rep = sweep.run_sweep(cfg.seed, cfg.cases, precision)
        ok &= rep.passed
        summary[f"f{precision}"] = dict(max_by_kind=rep.max_by_kind(), decomposition=rep.max_decomposition_diff,
                                        mac_mismatches=len(rep.mac_mismatches), passed=rep.passed)
        print(f"float{precision}: " + ", ".join(f"{k} {v:.2e}" for k, v in sorted(rep.max_by_kind().items()))
              + f"  decomposition {rep.max_decomposition_diff:.2e}  MAC mismatches {len(rep.mac_mismatches)}")
    if cfg.out:
        cfg.out.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return 0 if ok else 1


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cases", type=int, default=Config.cases)
    ap.add_argument("--out", type=Path)
    a = ap.parse_args()
    raise SystemExit(main(Config(a.seed, a.cases, a.out)))
