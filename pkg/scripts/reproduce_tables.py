"""Recompute every built-in FLOPs/params row and compare with the published figures."""

import argparse
from dataclasses import dataclass
from pathlib import Path

from dualconv import cost, published


@dataclass
class Config:
    out_dir: Path = Path("results")
    only_model: str | None = None


def main(cfg: Config) -> int:
    rows = [r for r in published.ROWS if cfg.only_model in (None, r.model)]
    checks = published.check_all(rows)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for c in checks:
        print(f"{c.row.label:<40} {cost.human(c.flops):>9} vs {c.row.flops:>9}  "
              f"{cost.human(c.params):>9} vs {c.row.params or '-':>9}  {c.status}")
        records.append(dict(model=c.row.model, variant=c.row.variant, G_or_P=c.row.g_or_p, flops_mac=c.flops,
                            params=c.params, ratio_vs_standard=None, kind=c.row.kind.value,
                            published_flops=c.row.flops, published_params=c.row.params, status=c.status))
    extra = ("kind", "published_flops", "published_params", "status")
    (cfg.out_dir / "tables.csv").write_text(cost.rows_to_csv(records, extra), encoding="utf-8")
    (cfg.out_dir / "tables.json").write_text(cost.rows_to_json(records), encoding="utf-8")
    return 0 if all(c.passed or not c.row.gating for c in checks) else 1


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path, default=Config.out_dir)
    ap.add_argument("--model")
    a = ap.parse_args()
    raise SystemExit(main(Config(a.out_dir, a.model)))
