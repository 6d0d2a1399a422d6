"""Performance metrics and plot-ready tabular output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float = math.nan

    def ci95(self) -> tuple[float, float]:
        return self.value - 1.96 * self.se, self.value + 1.96 * self.se

    def overlaps(self, other: "Estimate") -> bool:
        lo, hi = self.ci95()
        olo, ohi = other.ci95()
        return lo <= ohi and olo <= hi


def mean_estimate(samples: Sequence[float] | np.ndarray) -> Estimate:
    x = np.asarray(samples, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return Estimate(float(x.mean()), se)


@dataclass
class MetricsReport:
    """Scalar summaries of one experiment, each with a standard error."""

    lateness_mean: Estimate | None = None
    lateness_var: Estimate | None = None
    lateness_rms: Estimate | None = None
    rms_curve: np.ndarray | None = None
    request_rate: float | None = None
    denial_rate: float | None = None
    headway: dict[int, tuple[Estimate, Estimate]] = field(default_factory=dict)
    recovery: Estimate | None = None

    def __post_init__(self) -> None:
        for name in ("request_rate", "denial_rate"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.lateness_mean and self.lateness_var and self.lateness_rms:
            lhs = self.lateness_rms.value**2
            rhs = self.lateness_mean.value**2 + self.lateness_var.value
            if abs(lhs - rhs) > 1e-9 * max(abs(rhs), 1.0):
                raise ValueError("RMS^2 must equal mean^2 + variance")

    def as_flat(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for name in ("lateness_mean", "lateness_var", "lateness_rms", "recovery"):
            est = getattr(self, name)
            if est is not None:
                out[name] = est.value
                out[f"{name}_se"] = est.se
        for name in ("request_rate", "denial_rate"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        return out


def lateness_moments(trajectories: np.ndarray) -> MetricsReport:
    """Steady-state mean, variance and RMS pooled over buses and distance.

    Standard errors treat each bus as one independent sample of its
    distance-averaged moments.
    """
    x = np.asarray(trajectories, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a (buses, distance) array with at least two buses")
    mean = float(x.mean())
    var = float(x.var())
    per_bus_mean = x.mean(axis=1)
    per_bus_sq = (x * x).mean(axis=1)
    per_bus_var = ((x - mean) ** 2).mean(axis=1)
    m = mean_estimate(per_bus_mean)
    v = Estimate(var, mean_estimate(per_bus_var).se)
    rms = math.sqrt(mean * mean + var)
    r = Estimate(rms, mean_estimate(per_bus_sq).se / (2 * rms) if rms > 0 else 0.0)
    return MetricsReport(lateness_mean=Estimate(mean, m.se), lateness_var=v, lateness_rms=r)


def rms_vs_distance(trajectories: np.ndarray) -> np.ndarray:
    """Pointwise RMS across buses at every signal index."""
    x = np.asarray(trajectories, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("rms_vs_distance needs at least two trajectories")
    return np.sqrt((x * x).mean(axis=0))


def request_rate(request_log: int | Sequence[Any] | np.ndarray, passages: int) -> float:
    """Fraction of signal passages at which priority was requested.

    ``request_log`` is either a count or a log with one entry per request.
    A boolean array is read as a per-passage flag.
    """
    if passages <= 0:
        raise ValueError("passages must be positive")
    if isinstance(request_log, (int, np.integer)):
        n = int(request_log)
    else:
        arr = np.asarray(request_log)
        n = int(arr.sum()) if arr.dtype == bool else len(request_log)
    if n > passages:
        raise ValueError("more requests than passages")
    return n / passages


def denial_rate(requests: int, grants: int) -> float:
    if requests <= 0:
        raise ValueError("no requests")
    if not 0 <= grants <= requests:
        raise ValueError("grants must lie in [0, requests]")
    return (requests - grants) / requests


def headway_stats(headways: np.ndarray, times: np.ndarray | None = None,
                  warmup: float = 0.0, min_samples: int = 100) -> tuple[float, float]:
    """(mean, std) of headways in minutes, pooled over stations and time."""
    h = np.asarray(headways, dtype=float)
    if times is not None:
        h = h[np.asarray(times) >= warmup]
    if h.size < min_samples:
        raise ValueError(f"only {h.size} post-warmup headways, need {min_samples}")
    return float(h.mean() / 60.0), float(h.std() / 60.0)


def recovery_distances(trajectories: np.ndarray, initial: float,
                       level: float = 0.0) -> np.ndarray:
    """Distance (signal spacings) at which each path first reaches ``level``.

    Column ``i`` of ``trajectories`` holds the lateness at distance ``i + 1``;
    the path starts at ``initial`` at distance 0.  Crossings are located by
    linear interpolation; paths that never cross give NaN.
    """
    x = np.asarray(trajectories, dtype=float)
    n, m = x.shape
    full = np.hstack([np.full((n, 1), float(initial)), x]) - level
    sign0 = np.sign(full[:, 0])
    if np.any(sign0 == 0):
        return np.where(sign0 == 0, 0.0, np.nan)
    crossed = full * sign0[:, None] <= 0
    out = np.full(n, np.nan)
    has = crossed.any(axis=1)
    k = np.argmax(crossed, axis=1)
    rows = np.nonzero(has)[0]
    a = full[rows, k[rows] - 1]
    b = full[rows, k[rows]]
    out[rows] = (k[rows] - 1) + a / (a - b)
    return out


# -- tabular output ----------------------------------------------------------

@dataclass
class Table:
    """One CSV: unit-annotated columns plus one row per grid point."""

    name: str
    columns: list[str]
    rows: list[tuple[Any, ...]] = field(default_factory=list)

    def add(self, *values: Any) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"{self.name}: expected {len(self.columns)} values")
        self.rows.append(tuple(values))


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(round(v, 10))
    return str(v)


def emit_report(tables: Table | Iterable[Table], out_dir: str | Path,
                manifest: Mapping[str, Any] | None = None, fmt: str = "csv") -> list[Path]:
    """Write each table as CSV plus a ``manifest.txt`` of ``key = value`` lines."""
    if fmt != "csv":
        raise ValueError(f"unsupported format {fmt!r}")
    if isinstance(tables, Table):
        tables = [tables]
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = []
    units: dict[str, str] = {}
    for table in tables:
        path = out / f"{table.name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([_fmt(v) for v in row])
        paths.append(path)
        units[f"columns.{table.name}"] = ", ".join(table.columns)
        units[f"rows.{table.name}"] = str(len(table.rows))
    lines = [f"{k} = {v}" for k, v in {**dict(manifest or {}), **units}.items()]
    mpath = out / "manifest.txt"
    mpath.write_text("\n".join(lines) + "\n")
    paths.append(mpath)
    return paths
