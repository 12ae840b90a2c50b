"""Driving-performance metrics (CC, CO, OS, speed) from per-step episode logs.

CC, CO and OS are per-step fractions: the share of an agent's steps with the
vehicle-collision, object-collision or lane-departure flag set. Episodes that end
early for an agent are normalized by the steps it executed unless the report asks
for the configured episode length instead.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import LOG_COLUMNS
from .errors import ConfigurationError, LogParseError

log = logging.getLogger(__name__)

NORMALIZE_MODES = ("executed", "configured")
TABLE_COLUMNS = ("policy", "scenario", "map", "episodes", "cc", "co", "os", "mean_speed")
SERIES_COLUMNS = ("t", "mean_speed")


@dataclass
class EpisodeLog:
    path: str
    meta: dict
    policies: dict  # agent id -> policy name
    rows: dict  # agent id -> list of (t, role, F, CV, CO, IO)


@dataclass(frozen=True)
class EpisodeMetrics:
    agent_id: str
    policy: str
    role: str
    scenario: str
    map_id: str
    seed: int
    cc: float
    co: float
    os: float
    speeds: tuple
    steps: int

    @property
    def mean_speed(self) -> float:
        return float(np.mean(self.speeds)) if self.speeds else 0.0


@dataclass
class GroupReport:
    policy: str
    scenario: str
    map_id: str
    episodes: int
    cc: float
    co: float
    os: float
    mean_speed: float
    speed_curve: list = field(default_factory=list)


@dataclass
class AggregateReport:
    groups: list


def _flag(text: str, where: str) -> bool:
    if text not in ("0", "1"):
        raise LogParseError(f"{where}: event flag must be 0 or 1, got {text!r}")
    return text == "1"


def parse_episode_log(path) -> EpisodeLog:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise LogParseError(f"{path}: cannot read log: {exc}") from exc
    meta, policies, rows = {}, {}, {}
    header_seen = False
    col = {c: i for i, c in enumerate(LOG_COLUMNS)}
    for lineno, line in enumerate(lines, 1):
        where = f"{path}:{lineno}"
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("policy "):
                agent, _, name = body[len("policy "):].partition("=")
                policies[agent] = name
            else:
                key, sep, value = body.partition("=")
                if not sep:
                    raise LogParseError(f"{where}: metadata line must be '# key=value'")
                meta[key] = value
            continue
        if not header_seen:
            if tuple(line.split(",")) != LOG_COLUMNS:
                raise LogParseError(f"{where}: expected header {','.join(LOG_COLUMNS)}")
            header_seen = True
            continue
        fields = line.split(",")
        if len(fields) != len(LOG_COLUMNS):
            raise LogParseError(f"{where}: expected {len(LOG_COLUMNS)} fields, got {len(fields)}")
        try:
            t = int(fields[col["t"]])
            speed = float(fields[col["F"]])
        except ValueError as exc:
            raise LogParseError(f"{where}: {exc}") from exc
        if not math.isfinite(speed) or t < 0:
            raise LogParseError(f"{where}: step and speed must be finite and non-negative")
        flags = tuple(_flag(fields[col[c]], where) for c in ("CV", "CO", "IO"))
        rows.setdefault(fields[col["agent_id"]], []).append((t, fields[col["role"]], speed, *flags))
    if not header_seen:
        raise LogParseError(f"{path}: no header line")
    return EpisodeLog(str(path), meta, policies, rows)


def compute_episode_metrics(episode: EpisodeLog, normalize: str = "executed") -> list:
    """One EpisodeMetrics per agent in the log."""
    if normalize not in NORMALIZE_MODES:
        raise ConfigurationError(f"normalize must be one of {NORMALIZE_MODES}, got {normalize!r}")
    out = []
    for agent, rows in episode.rows.items():
        by_step = {}
        for t, role, speed, cv, co, io in rows:
            if t in by_step:
                raise LogParseError(f"{episode.path}: agent {agent} logs step {t} twice")
            by_step[t] = (role, speed, cv, co, io)
        steps = sorted(by_step)
        if normalize == "configured":
            if "steps" not in episode.meta:
                raise LogParseError(f"{episode.path}: configured normalization needs a '# steps=' line")
            denom = int(episode.meta["steps"])
        else:
            denom = len(steps)
        frac = lambda k: sum(by_step[t][k] for t in steps) / denom
        out.append(
            EpisodeMetrics(
                agent_id=agent,
                policy=episode.policies.get(agent, "unknown"),
                role=by_step[steps[0]][0],
                scenario=episode.meta.get("scenario", ""),
                map_id=episode.meta.get("map", ""),
                seed=int(episode.meta.get("seed", -1)),
                cc=frac(2),
                co=frac(3),
                os=frac(4),
                speeds=tuple(by_step[t][1] for t in steps),
                steps=len(steps),
            )
        )
    return out


def aggregate(metrics: list, expected_groups=()) -> AggregateReport:
    """Means per (policy, scenario, map); speed curves averaged per step index over
    the episodes still running at that index. Listed groups with no episodes are
    dropped with a warning."""
    if not metrics and not expected_groups:
        raise ConfigurationError("aggregate needs at least one episode")
    grouped = {}
    for m in metrics:
        grouped.setdefault((m.policy, m.scenario, m.map_id), []).append(m)
    for key in expected_groups:
        if key not in grouped:
            log.warning("no episodes for group %s; omitted from the report", "/".join(map(str, key)))
    groups = []
    for (policy, scenario, map_id), ms in sorted(grouped.items()):
        longest = max(len(m.speeds) for m in ms)
        sums = np.zeros(longest)
        counts = np.zeros(longest)
        for m in ms:
            sums[: len(m.speeds)] += m.speeds
            counts[: len(m.speeds)] += 1
        curve = [float(s / c) for s, c in zip(sums, counts)]
        groups.append(
            GroupReport(
                policy, scenario, map_id, len(ms),
                float(np.mean([m.cc for m in ms])),
                float(np.mean([m.co for m in ms])),
                float(np.mean([m.os for m in ms])),
                float(np.mean([m.mean_speed for m in ms])),
                curve,
            )
        )
    return AggregateReport(groups)


def _g(x: float) -> str:
    return f"{x:.6g}"


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in text)


def emit_report(report: AggregateReport, out_dir) -> list:
    """metrics.csv (one row per group), one speed_<group>.csv per group, summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = [",".join(TABLE_COLUMNS)]
    written = []
    for g in report.groups:
        table.append(",".join([g.policy, g.scenario, g.map_id, str(g.episodes), _g(g.cc), _g(g.co), _g(g.os), _g(g.mean_speed)]))
        series = out / f"speed_{_slug(g.policy)}_s{_slug(g.scenario)}_{_slug(g.map_id)}.csv"
        lines = [",".join(SERIES_COLUMNS)] + [f"{t},{_g(v)}" for t, v in enumerate(g.speed_curve, 1)]
        series.write_text("\n".join(lines) + "\n")
        written.append(series)
    path = out / "metrics.csv"
    path.write_text("\n".join(table) + "\n")
    summary = {
        "groups": [
            {k: getattr(g, k) for k in ("policy", "scenario", "map_id", "episodes", "cc", "co", "os", "mean_speed")}
            for g in report.groups
        ]
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return [path, *written, out / "summary.json"]


def read_table(path) -> list:
    """Parse a metrics.csv back into dicts with numeric columns as floats."""
    lines = Path(path).read_text().splitlines()
    if tuple(lines[0].split(",")) != TABLE_COLUMNS:
        raise LogParseError(f"{path}:1: not a metrics table")
    rows = []
    for line in lines[1:]:
        vals = dict(zip(TABLE_COLUMNS, line.split(",")))
        vals["episodes"] = int(vals["episodes"])
        for k in ("cc", "co", "os", "mean_speed"):
            vals[k] = float(vals[k])
        rows.append(vals)
    return rows


def find_logs(root) -> list:
    """Every episode log (``ep*.csv``) under ``root``, in sorted order."""
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(root.rglob("ep*.csv"))


def report_from_logs(paths, normalize: str = "executed") -> AggregateReport:
    metrics = []
    for p in paths:
        metrics += compute_episode_metrics(parse_episode_log(p), normalize)
    return aggregate(metrics)


def failure_sum(metrics: list, policy: str) -> float:
    """Mean CC + CO + OS over the episodes of one policy."""
    ms = [m for m in metrics if m.policy == policy]
    if not ms:
        raise ConfigurationError(f"no episodes for policy {policy!r}")
    return float(np.mean([m.cc + m.co + m.os for m in ms]))


def paired_bootstrap_ci(a, b, n_resamples: int = 10_000, level: float = 0.95, seed: int = 0) -> tuple:
    """Mean of the paired differences b - a and its percentile bootstrap interval."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ConfigurationError("paired bootstrap needs two equal-length samples of at least 2")
    diff = b - a
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(diff), size=(n_resamples, len(diff)))
    means = diff[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return float(diff.mean()), float(lo), float(hi)
