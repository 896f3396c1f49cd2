"""Meta-analysis of two systems over many query sets.

Each query set gives a paired t-interval on the per-query metric deltas
(A - B). Sets are pooled with DerSimonian-Laird random effects, weights
``1 / (se^2 + tau^2)``, and a normal-approximation summary interval.
"""

from __future__ import annotations

import json
import logging
import math
import xml.etree.ElementTree as ET
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .metrics import PerQueryScores

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuerySetComparison:
    name: str
    n: int
    mean_delta: float
    se: float | None
    ci_low: float | None
    ci_high: float | None
    significant: bool
    deltas: tuple[float, ...] = field(default=(), repr=False)

    @property
    def has_ci(self) -> bool:
        return self.ci_low is not None


@dataclass(frozen=True)
class EffectSummary:
    comparisons: tuple[QuerySetComparison, ...]
    summary_effect: float
    summary_ci: tuple[float, float]
    tau_squared: float
    alpha: float = 0.05
    degenerate: bool = False
    excluded: tuple[str, ...] = ()


def _values(scores: PerQueryScores | Mapping[str, float]) -> Mapping[str, float]:
    return scores.scores if isinstance(scores, PerQueryScores) else scores


def compare_set(scores_a: PerQueryScores | Mapping[str, float], scores_b: PerQueryScores | Mapping[str, float],
                alpha: float = 0.05, name: str = "", effect: str = "raw") -> QuerySetComparison:
    """Paired two-sided t-interval at level ``1 - alpha`` on the deltas ``a - b``.

    ``effect="standardized"`` reports the paired standardized mean difference
    ``mean/sd`` with the usual large-sample standard error instead.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    a, b = _values(scores_a), _values(scores_b)
    common = sorted(set(a) & set(b))
    if len(common) != len(a) or len(common) != len(b):
        log.warning("query set %s: %d/%d queries outside the intersection",
                    name, len(a) - len(common), len(b) - len(common))
    deltas = np.array([a[q] - b[q] for q in common], dtype=np.float64)
    n = deltas.size
    if n == 0:
        return QuerySetComparison(name, 0, 0.0, None, None, None, False)
    mean = float(deltas.mean())
    if n < 2:
        return QuerySetComparison(name, n, mean, None, None, None, False, tuple(deltas.tolist()))
    sd = float(deltas.std(ddof=1))
    if effect == "standardized":
        if sd == 0.0:
            raise ValueError(f"query set {name}: standardized effect undefined for zero-variance deltas")
        mean = mean / sd
        se = math.sqrt(1.0 / n + mean * mean / (2.0 * n))
        half = stats.norm.ppf(1.0 - alpha / 2.0) * se
    elif effect == "raw":
        se = sd / math.sqrt(n)
        half = float(stats.t.ppf(1.0 - alpha / 2.0, n - 1)) * se
    else:
        raise ValueError(f"unknown effect {effect!r}")
    lo, hi = mean - half, mean + half
    significant = not (lo <= 0.0 <= hi)
    return QuerySetComparison(name, n, mean, se, lo, hi, significant, tuple(deltas.tolist()))


def compare_sets(sets_a: Mapping[str, Mapping[str, float]], sets_b: Mapping[str, Mapping[str, float]],
                 alpha: float = 0.05, bonferroni: bool = False, effect: str = "raw") -> list[QuerySetComparison]:
    """Compare matching named sets, sorted by name."""
    names = sorted(set(sets_a) & set(sets_b))
    if set(sets_a) != set(sets_b):
        log.warning("query sets present on one side only are ignored")
    level = alpha / len(names) if bonferroni and names else alpha
    return [compare_set(sets_a[s], sets_b[s], level, s, effect) for s in names]


def summarize(comparisons: Sequence[QuerySetComparison], alpha: float = 0.05) -> EffectSummary:
    """DerSimonian-Laird random-effects pooling of the per-set mean deltas.

    Sets without a CI (n < 2) are ignored. Sets with zero variance cannot be
    weighted and are excluded from pooling, unless every set has zero
    variance, in which case the unweighted mean is reported with a
    degenerate interval and ``degenerate=True``.
    """
    valid = [c for c in comparisons if c.has_ci]
    if not valid:
        raise ValueError("no comparison has a confidence interval")
    positive = [c for c in valid if c.se > 0.0]
    excluded = tuple(c.name for c in valid if c.se == 0.0)
    if not positive:
        mean = float(np.mean([c.mean_delta for c in valid]))
        return EffectSummary(tuple(comparisons), mean, (mean, mean), 0.0, alpha, True, ())
    if excluded:
        log.warning("zero-variance sets excluded from pooling: %s", ", ".join(excluded))
    y = np.array([c.mean_delta for c in positive])
    v = np.array([c.se ** 2 for c in positive])
    tau2 = dersimonian_laird_tau2(y, v)
    w = 1.0 / (v + tau2)
    mu = float(np.sum(w * y) / np.sum(w))
    se = math.sqrt(1.0 / float(np.sum(w)))
    z = float(stats.norm.ppf(1.0 - alpha / 2.0))
    return EffectSummary(tuple(comparisons), mu, (mu - z * se, mu + z * se), tau2, alpha, False, excluded)


def dersimonian_laird_tau2(y: np.ndarray, v: np.ndarray) -> float:
    w = 1.0 / v
    mu_fixed = np.sum(w * y) / np.sum(w)
    q = float(np.sum(w * (y - mu_fixed) ** 2))
    c = float(np.sum(w) - np.sum(w * w) / np.sum(w))
    if c <= 0.0:
        return 0.0
    return max(0.0, (q - (len(y) - 1)) / c)


# ---------------------------------------------------------------------------
# Forest plot output
# ---------------------------------------------------------------------------


def _record(c: QuerySetComparison) -> dict:
    rec = asdict(c)
    rec.pop("deltas")
    rec["kind"] = "set"
    return rec


def forest_records(summary: EffectSummary) -> dict:
    return {
        "alpha": summary.alpha,
        "records": [_record(c) for c in summary.comparisons] + [{
            "kind": "summary",
            "name": "summary",
            "mean_delta": summary.summary_effect,
            "ci_low": summary.summary_ci[0],
            "ci_high": summary.summary_ci[1],
            "tau_squared": summary.tau_squared,
            "degenerate": summary.degenerate,
            "excluded": list(summary.excluded),
        }],
    }


def read_forest(path: str | Path) -> EffectSummary:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    sets, summ = [], None
    for rec in data["records"]:
        if rec["kind"] == "summary":
            summ = rec
        else:
            sets.append(QuerySetComparison(rec["name"], rec["n"], rec["mean_delta"], rec["se"],
                                           rec["ci_low"], rec["ci_high"], rec["significant"]))
    if summ is None:
        raise ValueError(f"{path}: no summary record")
    return EffectSummary(tuple(sets), summ["mean_delta"], (summ["ci_low"], summ["ci_high"]),
                         summ["tau_squared"], data["alpha"], summ["degenerate"], tuple(summ["excluded"]))


def forest_svg(summary: EffectSummary, title: str = "A - B") -> ET.Element:
    rows = summary.comparisons
    row_h, top, label_w, plot_w, pad = 22, 40, 180, 420, 20
    height = top + row_h * (len(rows) + 2) + pad
    width = label_w + plot_w + 2 * pad

    xs = [0.0, *summary.summary_ci]
    for c in rows:
        xs.extend([c.mean_delta] if not c.has_ci else [c.ci_low, c.ci_high])
    lo, hi = min(xs), max(xs)
    span = hi - lo or 1.0
    lo, hi = lo - 0.05 * span, hi + 0.05 * span

    def px(x):
        return label_w + pad + (x - lo) / (hi - lo) * plot_w

    def f(x):
        return f"{x:.2f}"

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "text", x=str(pad), y="20", attrib={"font-family": "sans-serif", "font-size": "14"}).text = title
    y_end = top + row_h * (len(rows) + 1)
    ET.SubElement(svg, "line", x1=f(px(0.0)), x2=f(px(0.0)), y1=str(top - 10), y2=str(y_end),
                  stroke="#888", attrib={"stroke-dasharray": "4 3", "class": "zero-line"})
    for i, c in enumerate(rows):
        y = top + row_h * i + row_h / 2
        g = ET.SubElement(svg, "g", attrib={"class": "set-row", "data-name": c.name})
        colour = "#1f6fb2" if c.significant else "#555"
        ET.SubElement(g, "text", x=str(pad), y=f(y + 4), attrib={"font-family": "sans-serif", "font-size": "12"}).text = \
            f"{c.name} (n={c.n})"
        if c.has_ci:
            ET.SubElement(g, "line", x1=f(px(c.ci_low)), x2=f(px(c.ci_high)), y1=f(y), y2=f(y), stroke=colour)
        ET.SubElement(g, "rect", x=f(px(c.mean_delta) - 3), y=f(y - 3), width="6", height="6", fill=colour)
    y = top + row_h * len(rows) + row_h / 2
    lo_s, hi_s = summary.summary_ci
    m = summary.summary_effect
    points = f"{f(px(lo_s))},{f(y)} {f(px(m))},{f(y - 6)} {f(px(hi_s))},{f(y)} {f(px(m))},{f(y + 6)}"
    ET.SubElement(svg, "polygon", points=points, fill="#b22222", attrib={"class": "summary"})
    ET.SubElement(svg, "text", x=str(pad), y=f(y + 4), attrib={"font-family": "sans-serif", "font-size": "12"}).text = \
        f"summary (tau2={summary.tau_squared:.2e})"
    return svg


def emit_forest(summary: EffectSummary, path_data: str | Path, path_svg: str | Path, title: str = "A - B") -> None:
    Path(path_data).write_text(json.dumps(forest_records(summary), indent=1) + "\n", encoding="utf-8")
    tree = ET.ElementTree(forest_svg(summary, title))
    ET.indent(tree)
    tree.write(path_svg, encoding="utf-8", xml_declaration=True)
