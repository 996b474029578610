"""Convergence episode per reflection strategy across seeds."""

import argparse

import numpy as np

from aimlab.env import synthetic_glyphs
from aimlab.trainer import STRATEGIES, TrainConfig, train
from aimlab.vqvae import VQConfig, pretrain


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--episodes", type=int, default=2000)
    args = ap.parse_args()
    ds = synthetic_glyphs(1000, seed=0)
    vq = pretrain(ds, VQConfig())
    for strategy in STRATEGIES:
        conv, tail = [], []
        for seed in range(args.seeds):
            log = train(TrainConfig(seed=seed, episodes=args.episodes, strategy=strategy), ds, vq.model.encode, vq.codebook)
            conv.append(log.convergence_episode())
            tail.append(log.trailing_mean())
        done = [c for c in conv if c is not None]
        med = f"{np.median(done):.0f}" if done else "-"
        print(f"{strategy:<18} converged {len(done)}/{len(conv)}  median episode {med}  "
              f"trailing mean {np.mean(tail):.3f}  {conv}")


if __name__ == "__main__":
    main()
