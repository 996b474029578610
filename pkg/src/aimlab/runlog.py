"""Episode records and the line-delimited JSON run log.

File layout: one ``header`` line carrying the full config, one ``episode``
line per game, and optionally a closing ``summary`` line. Appends are flushed
per line, and a truncated last line is dropped on load, so an interrupted run
still yields a usable log.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aimlab.errors import ConfigError

SCHEMA = "aimlab.runlog/1"
RECORD_FIELDS = (
    "episode", "label", "context_bit", "aim_a", "aim_b", "action_a", "action_b",
    "r_a", "r_b", "joint", "log_prob_a", "log_prob_b", "losses_a", "losses_b",
)


@dataclass
class EpisodeRecord:
    episode: int
    label: int
    context_bit: int
    aim_a: tuple[int, ...]
    aim_b: tuple[int, ...]
    action_a: str
    action_b: str
    r_a: float
    r_b: float
    joint: float
    log_prob_a: float
    log_prob_b: float
    losses_a: dict[str, float] = field(default_factory=dict)
    losses_b: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["aim_a"], d["aim_b"] = list(self.aim_a), list(self.aim_b)
        return json.dumps({"type": "episode", **d}, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        d = {k: d[k] for k in RECORD_FIELDS}
        d["aim_a"], d["aim_b"] = tuple(d["aim_a"]), tuple(d["aim_b"])
        return cls(**d)


@dataclass
class RunLog:
    config: dict
    kind: str = "aim"
    records: list[EpisodeRecord] = field(default_factory=list)
    summary: dict | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def K(self) -> int:
        return int(self.config["K"])

    def joint(self) -> np.ndarray:
        return np.array([r.joint for r in self.records], dtype=float)

    def window_means(self, size: int) -> list[dict]:
        """Non-overlapping window aggregates: mean joint reward and distinct AIMs."""
        out = []
        for start in range(0, len(self.records), size):
            chunk = self.records[start : start + size]
            seqs = {r.aim_a for r in chunk} | {r.aim_b for r in chunk}
            out.append({
                "start": start,
                "end": start + len(chunk),
                "mean_joint": float(np.mean([r.joint for r in chunk])),
                "unique_aims": len(seqs),
            })
        return out

    def trailing_mean(self, n: int = 200) -> float:
        j = self.joint()
        return float(j[-n:].mean()) if len(j) else float("nan")

    def convergence_episode(self, window: int = 200, threshold: float = 8.5) -> int | None:
        """Last episode of the first full trailing window whose mean joint reward reaches ``threshold``."""
        j = self.joint()
        if len(j) < window:
            return None
        means = np.convolve(j, np.ones(window) / window, mode="valid")
        hits = np.flatnonzero(means >= threshold - 1e-12)
        return int(hits[0]) + window - 1 if len(hits) else None


class RunLogWriter:
    """Append-only writer; usable as a context manager."""

    def __init__(self, path, config: dict, kind: str = "aim"):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._write({"type": "header", "schema": SCHEMA, "kind": kind, "config": config})

    def _write(self, obj: dict | str) -> None:
        line = obj if isinstance(obj, str) else json.dumps(obj, separators=(",", ":"), sort_keys=True)
        self._fh.write(line + "\n")
        self._fh.flush()

    def append(self, record: EpisodeRecord) -> None:
        self._write(record.to_json())

    def close(self, summary: dict | None = None) -> None:
        if self._fh.closed:
            return
        if summary is not None:
            self._write({"type": "summary", **summary})
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_runlog(path) -> RunLog:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    parsed = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            parsed.append(json.loads(line))
        except json.JSONDecodeError:
            if i >= len(lines) - 2:  # torn final line from an interrupted run
                break
            raise ConfigError(f"{path}: corrupt line {i + 1}")
    if not parsed or parsed[0].get("type") != "header":
        raise ConfigError(f"{path}: missing run log header")
    header = parsed[0]
    if header.get("schema") != SCHEMA:
        raise ConfigError(f"{path}: unsupported schema {header.get('schema')!r}")
    log = RunLog(header["config"], header.get("kind", "aim"))
    for obj in parsed[1:]:
        if obj.get("type") == "episode":
            log.records.append(EpisodeRecord.from_dict(obj))
        elif obj.get("type") == "summary":
            log.summary = obj
    return log


def write_runlog(path, log: RunLog) -> None:
    with RunLogWriter(path, log.config, log.kind) as w:
        for r in log.records:
            w.append(r)
        w.close(log.summary)
