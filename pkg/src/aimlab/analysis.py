"""Interpretability toolkit over run logs.

Everything here is a pure function of a :class:`~aimlab.runlog.RunLog` (and,
for the topology map, a codebook).
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aimlab.env import action_of
from aimlab.errors import InsufficientDataError
from aimlab.runlog import EpisodeRecord, RunLog

Seq = tuple[int, ...]


# ------------------------------------------------------------------ dictionary


@dataclass
class DictEntry:
    action: str
    count: int = 0
    first_seen: int = -1
    last_seen: int = -1
    mean_joint: float = 0.0


@dataclass
class AimDictionary:
    K: int
    entries: dict[tuple[str, Seq], DictEntry] = field(default_factory=dict)

    def total(self) -> int:
        return sum(e.count for e in self.entries.values())

    def ranked(self) -> list[tuple[tuple[str, Seq], DictEntry]]:
        return sorted(self.entries.items(), key=lambda kv: (-kv[1].count, kv[0]))

    def rows(self) -> list[dict]:
        return [
            {"agent": agent, "aim": " ".join(map(str, seq)), "action": e.action, "count": e.count,
             "first_seen": e.first_seen, "last_seen": e.last_seen, "mean_joint": round(e.mean_joint, 6)}
            for (agent, seq), e in self.ranked()
        ]


def update_dictionary(d: AimDictionary, record: EpisodeRecord) -> AimDictionary:
    for agent, seq in (("A", tuple(record.aim_a)), ("B", tuple(record.aim_b))):
        e = d.entries.get((agent, seq))
        if e is None:
            e = d.entries[(agent, seq)] = DictEntry(action_of(seq, d.K).value, first_seen=record.episode)
        e.count += 1
        e.last_seen = record.episode
        e.mean_joint += (record.joint - e.mean_joint) / e.count
    return d


def build_dictionary(log: RunLog) -> AimDictionary:
    d = AimDictionary(log.K)
    for r in log.records:
        update_dictionary(d, r)
    return d


# -------------------------------------------------------------------- spectrum


@dataclass
class FrequencySpectrum:
    entries: list[tuple[Seq, int]]
    start: int
    end: int

    @property
    def counts(self) -> np.ndarray:
        return np.array([c for _, c in self.entries], dtype=float)

    def top_share(self, k: int = 5) -> float:
        total = self.counts.sum()
        return float(self.counts[:k].sum() / total) if total else 0.0


def spectrum_from_sequences(seqs, start: int = 0, end: int = 0) -> FrequencySpectrum:
    counts = Counter(tuple(s) for s in seqs)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return FrequencySpectrum(ranked, start, end)


def frequency_spectrum(log: RunLog, window: tuple[int, int] | None = None) -> FrequencySpectrum:
    """Rank the AIM sequences of both agents used in episodes ``[start, end)``."""
    start, end = window if window is not None else (0, len(log.records))
    start, end = max(0, start), min(len(log.records), end)
    chunk = log.records[start:end]
    return spectrum_from_sequences([r.aim_a for r in chunk] + [r.aim_b for r in chunk], start, max(start, end))


# ------------------------------------------------------------------- power law


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    intercept: float
    r_squared: float
    n_points: int


def fit_power_law_points(ranks, counts) -> PowerLawFit:
    """OLS fit of ``log(count) = intercept - alpha * log(rank)``."""
    ranks = np.asarray(ranks, dtype=float)
    counts = np.asarray(counts, dtype=float)
    keep = counts > 0
    ranks, counts = ranks[keep], counts[keep]
    if len(counts) < 3:
        raise InsufficientDataError(f"power-law fit needs >= 3 positive counts, got {len(counts)}")
    x, y = np.log(ranks), np.log(counts)
    xc = x - x.mean()
    slope = float((xc * (y - y.mean())).sum() / (xc * xc).sum())
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    # flat counts: the fit is exact with zero slope
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid**2).sum()) / ss_tot
    return PowerLawFit(-slope if slope else 0.0, intercept, min(1.0, max(0.0, r2)), len(counts))


def fit_power_law(spectrum: FrequencySpectrum) -> PowerLawFit:
    counts = spectrum.counts
    return fit_power_law_points(np.arange(1, len(counts) + 1), counts)


# -------------------------------------------------------------------- topology


@dataclass
class TopologyProjection:
    points: list[tuple[int, tuple[float, float], float]]
    explained_variance: float
    degenerate: bool


def topology_projection(codebook: np.ndarray, usage: FrequencySpectrum | None = None) -> TopologyProjection:
    """Project codebook rows onto their top-2 principal axes.

    Each axis is signed so its largest-magnitude entry is positive. The usage
    weight of a code is its share of all token occurrences in ``usage``.
    """
    cb = np.asarray(codebook, dtype=float)
    K = len(cb)
    if K < 2:
        raise ValueError("topology projection needs K >= 2")
    centered = cb - cb.mean(axis=0)
    cov = centered.T @ centered / K
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    total = float(evals.sum())
    degenerate = total <= 1e-300
    comps = np.zeros((cb.shape[1], 2))
    for j in range(min(2, cb.shape[1])):
        v = evecs[:, j]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps[:, j] = v
    coords = np.zeros((K, 2)) if degenerate else centered @ comps
    weights = np.zeros(K)
    if usage is not None:
        for seq, count in usage.entries:
            for t in seq:
                weights[t] += count
        if weights.sum():
            weights /= weights.sum()
    explained = 0.0 if degenerate else float(evals[:2].sum() / total)
    points = [(k, (float(coords[k, 0]), float(coords[k, 1])), float(weights[k])) for k in range(K)]
    return TopologyProjection(points, explained, degenerate)


# ------------------------------------------------------------------ covariance


@dataclass
class CodeStats:
    code: Seq
    occurrences: int
    p_cooperate: float
    correlation: float
    degenerate: bool


@dataclass
class CovarianceReport:
    key: str
    rows: list[CodeStats]


def _point_biserial(present: np.ndarray, reward: np.ndarray) -> tuple[float, bool]:
    if present.std() == 0 or reward.std() == 0:
        return 0.0, True
    return float(np.clip(np.corrcoef(present.astype(float), reward)[0, 1], -1.0, 1.0)), False


def policy_code_covariance(log: RunLog, key: str = "first_token") -> CovarianceReport:
    """Per-code P(C | code) and the point-biserial correlation of code presence with joint reward.

    ``key="first_token"`` groups messages by their first token (the one the
    action rule reads); ``key="sequence"`` uses whole AIM sequences. Each
    agent's message is paired with that agent's own action.
    """
    if key not in ("first_token", "sequence"):
        raise ValueError("key must be 'first_token' or 'sequence'")

    def k(seq):
        return (seq[0],) if key == "first_token" else tuple(seq)

    reward = log.joint()
    coop: dict[Seq, list[int]] = {}
    present: dict[Seq, np.ndarray] = {}
    n = len(log.records)
    for i, r in enumerate(log.records):
        for seq, act in ((r.aim_a, r.action_a), (r.aim_b, r.action_b)):
            c = k(seq)
            coop.setdefault(c, []).append(act == "C")
            present.setdefault(c, np.zeros(n, dtype=bool))[i] = True
    rows = []
    for c in sorted(coop):
        corr, degen = _point_biserial(present[c], reward)
        rows.append(CodeStats(c, len(coop[c]), float(np.mean(coop[c])), corr, degen))
    return CovarianceReport(key, rows)


# ----------------------------------------------------------------------- trace


@dataclass(frozen=True)
class ChangeEvent:
    episode: int
    agent: str
    old: Seq
    new: Seq


def _dominant(seqs) -> Seq:
    counts = Counter(seqs)
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def decision_change_trace(log: RunLog, window: int = 50, stride: int | None = None) -> list[ChangeEvent]:
    """Events where an agent's most-used AIM differs between consecutive windows.

    Windows start every ``stride`` episodes (default: back to back). An event
    is stamped with the first episode of the new window.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    stride = stride or window
    events: list[ChangeEvent] = []
    recs = log.records
    for agent, attr in (("A", "aim_a"), ("B", "aim_b")):
        prev = None
        for start in range(0, len(recs) - window + 1, stride):
            dom = _dominant(getattr(r, attr) for r in recs[start : start + window])
            if prev is not None and dom != prev:
                events.append(ChangeEvent(recs[start].episode, agent, prev, dom))
            prev = dom
    return sorted(events, key=lambda e: (e.episode, e.agent))


# --------------------------------------------------------------------- summary


def run_summary(log: RunLog, window: int = 200) -> dict:
    """Window aggregates plus the final dictionary snapshot, as stored at the end of a run log."""
    return {
        "episodes": len(log.records),
        "windows": log.window_means(window),
        "convergence_episode": log.convergence_episode(),
        "dictionary": build_dictionary(log).rows()[:50],
    }


@dataclass
class RunStats:
    name: str
    kind: str
    episodes: int
    convergence_episode: int | None
    trailing_mean: float
    top5_share: float


def run_stats(log: RunLog, name: str, trailing: int = 200, final: int = 1000) -> RunStats:
    n = len(log.records)
    spec = frequency_spectrum(log, (max(0, n - final), n))
    return RunStats(name, log.kind, n, log.convergence_episode(), log.trailing_mean(trailing), spec.top_share(5))


def compare_runs(logs: dict[str, RunLog]) -> list[RunStats]:
    """Rank runs by convergence episode (unconverged last), then by trailing mean."""
    stats = [run_stats(log, name) for name, log in logs.items()]
    return sorted(stats, key=lambda s: (s.convergence_episode is None, s.convergence_episode or 0, -s.trailing_mean, s.name))


# ------------------------------------------------------------------------- io


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(seq: Seq) -> str:
    return " ".join(map(str, seq))


def write_reports(log: RunLog, out_dir, codebook: np.ndarray | None = None, window: int = 50,
                  final: int = 1000) -> dict[str, Path]:
    """Write the CSV tables and SVG charts for one run; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(log.records)
    spec = frequency_spectrum(log, (max(0, n - final), n))
    paths = {}
    paths["spectrum"] = _write_csv(out / "spectrum.csv", ["rank", "aim", "count", "action"],
                                   [(i + 1, _fmt(s), c, action_of(s, log.K).value) for i, (s, c) in enumerate(spec.entries)])
    try:
        fit = fit_power_law(spec)
        row = ("ok", f"{fit.alpha:.10g}", f"{fit.intercept:.10g}", f"{fit.r_squared:.10g}", fit.n_points)
    except InsufficientDataError:
        row = ("insufficient_data", "", "", "", len(spec.entries))
    paths["powerlaw"] = _write_csv(out / "powerlaw.csv", ["status", "alpha", "intercept", "r_squared", "n_codes"], [row])
    cov_rows = []
    for key in ("first_token", "sequence"):
        for c in policy_code_covariance(log, key).rows:
            cov_rows.append((key, _fmt(c.code), c.occurrences, f"{c.p_cooperate:.6g}", f"{c.correlation:.6g}", int(c.degenerate)))
    paths["covariance"] = _write_csv(out / "covariance.csv", ["key", "code", "occurrences", "p_cooperate", "correlation", "degenerate"], cov_rows)
    paths["trace"] = _write_csv(out / "trace.csv", ["episode", "agent", "old", "new"],
                                [(e.episode, e.agent, _fmt(e.old), _fmt(e.new)) for e in decision_change_trace(log, window)])
    paths["dictionary"] = _write_csv(out / "dictionary.csv", ["agent", "aim", "action", "count", "first_seen", "last_seen", "mean_joint"],
                                     [tuple(r.values()) for r in build_dictionary(log).rows()])
    if codebook is not None:
        topo = topology_projection(codebook, spec)
        paths["topology"] = _write_csv(out / "topology.csv", ["code", "x", "y", "usage", "action"],
                                       [(k, f"{x:.6g}", f"{y:.6g}", f"{w:.6g}", action_of((k,), log.K).value) for k, (x, y), w in topo.points])
    episodes = [r.episode for r in log.records]
    paths["reward_curve"] = out / "reward_curve.svg"
    paths["reward_curve"].write_text(reward_curve_svg(episodes, log.joint(), window))
    paths["spectrum_svg"] = out / "spectrum.svg"
    paths["spectrum_svg"].write_text(spectrum_svg(spec))
    return paths


# ------------------------------------------------------------------------ svg

_W, _H, _PAD = 640, 360, 48


def _svg(body: list[str], attrs: str = "") -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}"{attrs}>\n'
            + "\n".join(body) + "\n</svg>\n")


def _axes(x_label: str, y_label: str, x_lo, x_hi, y_lo, y_hi) -> list[str]:
    x0, y0, x1, y1 = _PAD, _H - _PAD, _W - _PAD / 2, _PAD / 2
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{x0}" y="{y0 + 16}" font-size="11">{x_lo:g}</text>',
        f'<text x="{x1}" y="{y0 + 16}" font-size="11" text-anchor="end">{x_hi:g}</text>',
        f'<text x="{x0 - 4}" y="{y0}" font-size="11" text-anchor="end">{y_lo:g}</text>',
        f'<text x="{x0 - 4}" y="{y1 + 8}" font-size="11" text-anchor="end">{y_hi:g}</text>',
        f'<text x="{(x0 + x1) / 2}" y="{_H - 8}" font-size="12" text-anchor="middle">{x_label}</text>',
        f'<text x="12" y="{(y0 + y1) / 2}" font-size="12" transform="rotate(-90 12 {(y0 + y1) / 2})" text-anchor="middle">{y_label}</text>',
    ]


def _scale(v, lo, hi, a, b):
    return a if hi == lo else a + (v - lo) * (b - a) / (hi - lo)


def reward_curve_svg(episodes, joint, window: int = 50) -> str:
    episodes = np.asarray(episodes, dtype=float)
    joint = np.asarray(joint, dtype=float)
    if len(episodes) == 0:
        return _svg([], ' data-x-min="0" data-x-max="0"')
    x_lo, x_hi = float(episodes[0]), float(episodes[-1])
    y_lo, y_hi = min(0.0, float(joint.min())), max(10.0, float(joint.max()))
    w = max(1, min(window, len(joint)))
    smooth = np.convolve(joint, np.ones(w) / w, mode="valid")
    xs = episodes[w - 1 :]
    pts = " ".join(f"{_scale(x, x_lo, x_hi, _PAD, _W - _PAD / 2):.1f},{_scale(y, y_lo, y_hi, _H - _PAD, _PAD / 2):.1f}" for x, y in zip(xs, smooth))
    body = _axes("episode", f"joint reward ({w}-episode mean)", x_lo, x_hi, y_lo, y_hi)
    body.append(f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>')
    return _svg(body, f' data-x-min="{x_lo:g}" data-x-max="{x_hi:g}"')


def spectrum_svg(spec: FrequencySpectrum) -> str:
    """Rank-frequency scatter on log-log axes."""
    counts = spec.counts
    if len(counts) == 0:
        return _svg([])
    lx = np.log10(np.arange(1, len(counts) + 1))
    ly = np.log10(counts)
    x_hi, y_hi = max(float(lx[-1]), 1e-9), max(float(ly[0]), 1e-9)
    body = _axes("log10 rank", "log10 count", 0, round(x_hi, 3), 0, round(y_hi, 3))
    for x, y in zip(lx, ly):
        body.append(f'<circle cx="{_scale(x, 0, x_hi, _PAD, _W - _PAD / 2):.1f}" cy="{_scale(y, 0, y_hi, _H - _PAD, _PAD / 2):.1f}" r="2.5" fill="darkorange"/>')
    return _svg(body)

