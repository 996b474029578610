"""Pretrain the VQ-VAE and print the per-epoch history and the standards table."""

import argparse

from aimlab.env import load_idx, synthetic_glyphs
from aimlab.vqvae import VQConfig, pretrain


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--K", type=int, default=64)
    ap.add_argument("--restart-dead-codes", action="store_true")
    ap.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"), help="use an IDX pair instead of synthetic glyphs")
    ap.add_argument("--limit", type=int, default=5000)
    args = ap.parse_args()
    ds = load_idx(*args.idx, limit=args.limit) if args.idx else synthetic_glyphs(1000, seed=0)
    cfg = VQConfig(K=args.K, epochs=args.epochs, restart_dead_codes=args.restart_dead_codes)
    res = pretrain(ds, cfg, on_epoch=lambda r: print(
        f"epoch {r['epoch']:>3}  recon {r['recon_loss']:.4f}  commit {r['commit_loss']:.4f}  "
        f"codebook {r['codebook_loss']:.4f}  unique {r['unique_codes']}"))
    print()
    print(res.report.format())


if __name__ == "__main__":
    main()
