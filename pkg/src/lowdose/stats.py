"""Wilcoxon signed-rank test for paired metric samples, plus the star table.

The exact two-sided p-value is the null probability that min(W+, W-) is at
most the observed value, computed by enumerating the rank-sum distribution
with a dynamic program that respects average ranks for ties. Zero
differences are dropped before ranking.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .metrics import METRICS_COLUMNS, EvalRecord

EXACT_LIMIT = 25  # switch to the normal approximation above this many pairs
STAR_P = 0.001


@dataclass(frozen=True)
class WilcoxonResult:
    n_effective: int
    w_statistic: float
    p_two_sided: float
    method: str  # exact | normal_approx


def _exact_p(double_ranks: np.ndarray, w_obs2: int) -> float:
    """P(min(W+, S - W+) <= w_obs) over all 2^n equally likely sign choices.

    Ranks arrive doubled so tied average ranks become integers; the DP
    counts, for every achievable doubled W+, how many sign assignments
    produce it. Counts stay exact in float64 for n <= 25 (< 2^53).
    """
    total2 = int(double_ranks.sum())
    counts = np.zeros(total2 + 1)
    counts[0] = 1.0
    for r in double_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    w_plus = np.arange(total2 + 1)
    favorable = counts[np.minimum(w_plus, total2 - w_plus) <= w_obs2].sum()
    return float(favorable / 2.0 ** len(double_ranks))


def wilcoxon_signed_rank(x, y) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 1:
        raise DataError(f"paired samples must be equal-length 1D, got {x.shape} vs {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError("paired samples must be finite")
    d = x - y
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0, 0.0, 1.0, "exact")

    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= EXACT_LIMIT:
        double_ranks = np.rint(2.0 * ranks).astype(np.int64)
        p = _exact_p(double_ranks, int(round(2.0 * w)))
        return WilcoxonResult(n, w, min(p, 1.0), "exact")

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0:  # every |d| identical and n large: no usable ordering evidence
        return WilcoxonResult(n, w, 1.0, "normal_approx")
    z = (w - mean + 0.5) / math.sqrt(var)
    p = math.erfc(-z / math.sqrt(2.0))  # 2 * standard normal CDF(z)
    return WilcoxonResult(n, w, min(max(p, np.nextafter(0.0, 1.0)), 1.0), "normal_approx")


SIGNIFICANCE_COLUMNS = ["metric", "beta", "n", "w", "p", "method", "star"]

PAIRED_METRICS = METRICS_COLUMNS[3:]  # every numeric EvalRecord field


def significance_table(records: list[EvalRecord]) -> list[dict]:
    """Per (metric, beta) Wilcoxon tests of low_dose vs restored across studies.

    Pairs are matched by study id; pairs with non-finite values (e.g. the
    PSNR infinity sentinel) are dropped from that metric's test. A star
    marks p < 0.001.
    """
    by_arm: dict[tuple[int, str], dict[str, EvalRecord]] = {}
    betas = sorted({r.beta for r in records})
    for r in records:
        key = (r.beta, r.arm)
        if r.study_id in by_arm.setdefault(key, {}):
            raise DataError(f"duplicate record for {r.study_id} beta={r.beta} arm={r.arm}")
        by_arm[key][r.study_id] = r

    rows = []
    for metric in PAIRED_METRICS:
        for beta in betas:
            low = by_arm.get((beta, "low_dose"), {})
            high = by_arm.get((beta, "restored"), {})
            shared = sorted(set(low) & set(high))
            pairs = [
                (getattr(low[s], metric), getattr(high[s], metric))
                for s in shared
                if math.isfinite(getattr(low[s], metric)) and math.isfinite(getattr(high[s], metric))
            ]
            if not pairs:
                continue
            x = [p[0] for p in pairs]
            y = [p[1] for p in pairs]
            res = wilcoxon_signed_rank(x, y)
            rows.append({
                "metric": metric, "beta": beta, "n": res.n_effective,
                "w": res.w_statistic, "p": res.p_two_sided, "method": res.method,
                "star": "*" if res.p_two_sided < STAR_P else "",
            })
    return rows


def write_significance_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SIGNIFICANCE_COLUMNS)
        for row in rows:
            writer.writerow([
                row["metric"], row["beta"], row["n"],
                repr(float(row["w"])), repr(float(row["p"])),
                row["method"], row["star"],
            ])


def read_significance_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SIGNIFICANCE_COLUMNS:
            raise DataError(f"{path}: unexpected significance.csv columns {reader.fieldnames}")
        for row in reader:
            rows.append({
                "metric": row["metric"], "beta": int(row["beta"]), "n": int(row["n"]),
                "w": float(row["w"]), "p": float(row["p"]),
                "method": row["method"], "star": row["star"],
            })
    return rows
