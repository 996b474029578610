"""Command-line entry point: pretrain, train, analyze, compare.

Exit codes: 0 success, 2 usage error, 3 numerical or training failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from aimlab.agents import agents_checkpoint
from aimlab.analysis import compare_runs, write_reports
from aimlab.checkpoint import Checkpoint
from aimlab.config import DEFAULT_CONFIG, RunConfig, load_config, parse_config
from aimlab.errors import ConfigError, NumericalError, TrainingError, UsageError
from aimlab.runlog import load_runlog
from aimlab.trainer import train, train_baseline
from aimlab.vqvae import FAIL, VQVAE, pretrain

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 2, 3


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config(DEFAULT_CONFIG)
    if args.seed is not None:
        cfg.vqvae.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def output_root(args, cfg: RunConfig | None = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if os.environ.get("AIMLAB_OUT"):
        return Path(os.environ["AIMLAB_OUT"])
    return Path(cfg.output_dir if cfg else "runs")


def _sha256(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(hashlib.sha256(c).digest())
    return h.hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = output_root(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    dataset = cfg.dataset.load()
    t0 = time.perf_counter()
    history_path = out / "pretrain_log.jsonl"
    with open(history_path, "w") as fh:
        result = pretrain(dataset, cfg.vqvae, on_epoch=lambda row: fh.write(json.dumps(row, sort_keys=True) + "\n"))
    ckpt_path = result.model.to_checkpoint().save(out / "vqvae.ckpt")
    report_path = _write_json(out / "standards.json", result.report.to_dict())
    print(result.report.format())
    _write_json(out / "pretrain_manifest.json", {
        "run_id": f"vqvae-seed{cfg.vqvae.seed}",
        "config": cfg.snapshot(),
        "artifacts": {"checkpoint": str(ckpt_path), "standards": str(report_path), "history": str(history_path)},
        "timings": {"pretrain_seconds": round(time.perf_counter() - t0, 3)},
        "input_hash": _sha256(cfg.source.encode(), dataset.images.tobytes(), dataset.labels.tobytes()),
    })
    if args.strict and result.report.worst == FAIL:
        print("standards check failed (--strict)", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    root = output_root(args, cfg)
    kind = "baseline" if args.baseline else "aim"
    run_dir = root / "runs" / f"{kind}-seed{cfg.train.seed}"
    dataset = cfg.dataset.load()
    chunks = [cfg.source.encode(), kind.encode(), str(cfg.train.seed).encode(),
              dataset.images.tobytes(), dataset.labels.tobytes()]
    if not args.baseline:
        vq_path = Path(args.vqvae) if args.vqvae else root / "vqvae.ckpt"
        if not vq_path.exists():
            raise UsageError(f"VQ-VAE checkpoint not found: {vq_path} (run `aimlab pretrain` first)")
        vq_bytes = vq_path.read_bytes()
        chunks.append(vq_bytes)
        model = VQVAE.from_checkpoint(Checkpoint.from_bytes(vq_bytes))
        if (model.K, model.D, model.L) != (cfg.train.K, cfg.train.D, cfg.train.L):
            raise UsageError(f"checkpoint geometry K={model.K}, D={model.D}, L={model.L} does not match the config")
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest_path.unlink()  # manifest marks completion, so drop any stale one first
    log_path = run_dir / "runlog.jsonl"
    t0 = time.perf_counter()
    if args.baseline:
        runlog = train_baseline(cfg.train, dataset, log_path)
        tr = runlog.trainer
        arrays = {p.name: p.value for p in tr.speaker.parameters() + tr.listener.parameters()}
        ckpt = Checkpoint(cfg.train.K, cfg.train.D, cfg.train.L, 0.0, arrays)
    else:
        runlog = train(cfg.train, dataset, model.encode, model.frozen_codebook(), log_path)
        ckpt = agents_checkpoint(runlog.trainer.agent_a, runlog.trainer.agent_b, model.cfg.beta)
    ckpt_path = ckpt.save(run_dir / "agents.ckpt")
    conv = runlog.convergence_episode()
    print(f"{kind} seed {cfg.train.seed}: {len(runlog)} episodes, trailing mean {runlog.trailing_mean():.3f}, "
          f"convergence episode {conv if conv is not None else 'none'}")
    _write_json(manifest_path, {
        "run_id": run_dir.name,
        "config": cfg.snapshot(),
        "artifacts": {"runlog": str(log_path), "checkpoint": str(ckpt_path)},
        "timings": {"train_seconds": round(time.perf_counter() - t0, 3)},
        "input_hash": _sha256(*chunks),
    })
    return EXIT_OK


def _find_codebook(args, runlog_path: Path) -> np.ndarray | None:
    candidates = [Path(args.vqvae)] if args.vqvae else [runlog_path.parent.parent.parent / "vqvae.ckpt"]
    for path in candidates:
        if path.exists():
            return Checkpoint.load(path).arrays["codebook"]
    if args.vqvae:
        raise UsageError(f"VQ-VAE checkpoint not found: {args.vqvae}")
    return None


def cmd_analyze(args) -> int:
    path = Path(args.runlog)
    if not path.exists():
        raise UsageError(f"run log not found: {path}")
    runlog = load_runlog(path)
    if not runlog.records:
        raise UsageError(f"{path}: run log has no episodes")
    codebook = _find_codebook(args, path) if runlog.kind == "aim" else None
    out = Path(args.out) if args.out else path.parent / "report"
    paths = write_reports(runlog, out, codebook)
    for name, p in sorted(paths.items()):
        print(f"{name:<14} {p}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.runlogs) < 2:
        raise UsageError("compare needs at least two run logs")
    logs = {}
    for p in args.runlogs:
        path = Path(p)
        if not path.exists():
            raise UsageError(f"run log not found: {path}")
        name = path.parent.name if path.name == "runlog.jsonl" else path.stem
        while name in logs:
            name += "'"
        logs[name] = load_runlog(path)
    geometry = {(lg.config["K"], lg.config["L"]) for lg in logs.values()}
    if len(geometry) > 1:
        raise UsageError(f"run logs disagree on message geometry (K, L): {sorted(geometry)}")
    stats = compare_runs(logs)
    header = ["rank", "run", "kind", "episodes", "convergence_episode", "trailing_mean", "top5_share"]
    rows = [[i + 1, s.name, s.kind, s.episodes, "" if s.convergence_episode is None else s.convergence_episode,
             f"{s.trailing_mean:.4f}", f"{s.top5_share:.4f}"] for i, s in enumerate(stats)]
    out = Path(args.out) if args.out else output_root(args)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([header] + rows)
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aimlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="TOML run config (defaults built in)")
            p.add_argument("--seed", type=int, help="override vqvae.seed and train.seed")
        p.add_argument("--out", help="output root (else $AIMLAB_OUT, else output.directory)")

    p = sub.add_parser("pretrain", help="train the VQ-VAE and grade it")
    common(p)
    p.add_argument("--strict", action="store_true", help="exit 3 when any metric fails its band")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="run the two-agent game")
    common(p)
    p.add_argument("--baseline", action="store_true", help="message-as-action pair, no codebook")
    p.add_argument("--vqvae", help="VQ-VAE checkpoint (default <out>/vqvae.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="write CSV and SVG reports for one run log")
    p.add_argument("runlog")
    p.add_argument("--out", help="report directory (default next to the run log)")
    p.add_argument("--vqvae", help="VQ-VAE checkpoint for the topology table")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="rank several run logs")
    p.add_argument("runlogs", nargs="+")
    common(p, config=False)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"aimlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, NumericalError) as exc:
        print(f"aimlab: training failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
