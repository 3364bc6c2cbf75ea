"""Train the toy Dual, Group and mixed networks on the synthetic task and save trajectories."""

import argparse
from dataclasses import dataclass, field
from pathlib import Path

from dualconv.train import SyntheticTask, TrainConfig, train
from dualconv.zoo import tiny


@dataclass
class Config:
    models: tuple[str, ...] = ("tiny-dual", "tiny-group", "tiny-mixed")
    train: TrainConfig = field(default_factory=TrainConfig)
    task: SyntheticTask = field(default_factory=SyntheticTask)
    out_dir: Path = Path("results")


def main(cfg: Config) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for name in cfg.models:
        res = train(tiny(name), cfg.task, cfg.train, trajectory_path=cfg.out_dir / f"train_{name}.csv")
        print(f"{name:<12} final loss {res.history[-1].train_loss:.4f}  test accuracy {res.final_accuracy:.4f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--out-dir", type=Path, default=Config.out_dir)
    a = ap.parse_args()
    main(Config(train=TrainConfig(epochs=a.epochs, seed=a.seed),
                task=SyntheticTask(noise=a.noise, seed=a.seed), out_dir=a.out_dir))
