"""Paired-seed AIM vs baseline runs on the synthetic glyph set.

    python scripts/run_comparison.py --seeds 5 --episodes 2000 --out results/compare
"""

import argparse
import csv
from pathlib import Path

from aimlab.analysis import run_stats
from aimlab.env import synthetic_glyphs
from aimlab.trainer import TrainConfig, train, train_baseline
from aimlab.vqvae import VQConfig, pretrain


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--strategy", default="both")
    ap.add_argument("--out", default="results/compare")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ds = synthetic_glyphs(1000, seed=0)
    vq = pretrain(ds, VQConfig())
    print(vq.report.format())
    rows = []
    for seed in range(args.seeds):
        cfg = TrainConfig(seed=seed, episodes=args.episodes, strategy=args.strategy)
        aim = train(cfg, ds, vq.model.encode, vq.codebook, out / f"aim-seed{seed}.jsonl")
        base = train_baseline(TrainConfig(seed=seed, episodes=args.episodes), ds, out / f"baseline-seed{seed}.jsonl")
        a, b = run_stats(aim, f"aim-seed{seed}"), run_stats(base, f"baseline-seed{seed}")
        rows.append([seed, a.convergence_episode, b.convergence_episode, f"{a.trailing_mean:.3f}",
                     f"{b.trailing_mean:.3f}", f"{a.top5_share:.3f}", f"{b.top5_share:.3f}"])
        print(*rows[-1], sep="\t")
    header = ["seed", "aim_conv", "base_conv", "aim_trailing", "base_trailing", "aim_top5", "base_top5"]
    with open(out / "paired.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([header] + rows)
    wins = sum(r[1] is not None and (r[2] is None or r[1] <= r[2]) for r in rows)
    print(f"AIM converged no later than baseline in {wins}/{len(rows)} pairs")


if __name__ == "__main__":
    main()
