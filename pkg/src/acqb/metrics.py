"""Queue-length regret, cumulative regret, and multi-run aggregation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import AggregationError

RUN_COLUMNS = ("run_id", "t", "policy", "explored", "Q_agent", "Q_opt", "qregret",
               "per_round_regret", "cum_regret")
AGGREGATE_COLUMNS = ("t", "mean_qregret", "std_qregret", "mean_cum_regret", "std_cum_regret")


@dataclass(frozen=True)
class RoundRecord:
    t: int
    Q_agent: int
    Q_opt: int
    per_round_regret: float
    cum_regret: float
    explored: bool

    @property
    def qregret(self) -> int:
        return self.Q_agent - self.Q_opt


def per_round_regret(idx: Optional[int], S, instance) -> float:
    """Gap between the best assortment for the served context and the one offered.

    ``idx`` is the context's pool index; ``None`` or a negative index marks a
    dummy round, which contributes nothing.
    """
    if idx is None or idx < 0:
        return 0.0
    return float(instance.best_R[idx] - instance.rate(idx, S))


@dataclass
class AggregateSeries:
    t: np.ndarray
    mean_qregret: np.ndarray
    std_qregret: np.ndarray
    mean_cum_regret: np.ndarray
    std_cum_regret: np.ndarray
    runs: int

    def rows(self):
        for i in range(len(self.t)):
            yield (int(self.t[i]), float(self.mean_qregret[i]), float(self.std_qregret[i]),
                   float(self.mean_cum_regret[i]), float(self.std_cum_regret[i]))


def _mean_std(A: np.ndarray):
    mean = A.mean(axis=0)
    std = A.std(axis=0, ddof=1) if len(A) > 1 else np.zeros(A.shape[1])
    return mean, std


def aggregate(runs: Sequence[Sequence[RoundRecord]]) -> AggregateSeries:
    """Pointwise mean and sample standard deviation across runs."""
    if not runs:
        raise AggregationError("nothing to aggregate")
    lengths = {len(r) for r in runs}
    if len(lengths) != 1:
        raise AggregationError(f"runs have different horizons: {sorted(lengths)}")
    t = np.array([rec.t for rec in runs[0]])
    q = np.array([[rec.qregret for rec in r] for r in runs], dtype=float)
    c = np.array([[rec.cum_regret for rec in r] for r in runs], dtype=float)
    mq, sq = _mean_std(q)
    mc, sc = _mean_std(c)
    return AggregateSeries(t, mq, sq, mc, sc, runs=len(runs))


def _open_csv(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def write_run_csv(path, records: Sequence[RoundRecord], run_id: int, policy: str) -> None:
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in records:
            w.writerow((run_id, r.t, policy, int(r.explored), r.Q_agent, r.Q_opt, r.qregret,
                        float(r.per_round_regret), float(r.cum_regret)))


def write_aggregate_csv(path, series: dict) -> None:
    """Write one aggregate table; ``series`` maps policy name to :class:`AggregateSeries`.

    A single unnamed series (key ``None``) omits the policy column.
    """
    with_policy = list(series) != [None]
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((("policy",) if with_policy else ()) + AGGREGATE_COLUMNS)
        for name, agg in series.items():
            for row in agg.rows():
                w.writerow(((name,) if with_policy else ()) + row)


def read_aggregate_csv(path) -> dict:
    """Inverse of :func:`write_aggregate_csv`: policy name (or ``None``) to column arrays."""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cols = out.setdefault(row.get("policy"), {k: [] for k in AGGREGATE_COLUMNS})
            for k in AGGREGATE_COLUMNS:
                cols[k].append(float(row[k]))
    return {name: {k: np.array(v) for k, v in cols.items()} for name, cols in out.items()}
