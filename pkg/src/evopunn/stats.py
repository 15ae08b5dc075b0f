"""Run summaries and the normality / variance / mean comparison pipeline.

Test statistics are computed here; only the reference distributions' tail
functions (Student t and Fisher F) come from ``scipy.special``.  The
Kolmogorov-Smirnov p-value uses the asymptotic Kolmogorov series with the
normal's parameters estimated from the sample, which is the Lilliefors
setting and makes the p-value anti-conservative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

ALPHAS = (0.05, 0.01)


@dataclass
class RunSummary:
    mean: float
    std: float
    best: float
    worst: float
    n: int

    def format_row(self) -> str:
        return f"{self.mean:.4f} / {self.std:.4f} / {self.best:.4f} / {self.worst:.4f}"


@dataclass
class TestOutcome:
    statistic: float
    p_value: float
    df: float | tuple[float, float] | None = None

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    @property
    def decisions(self) -> dict[float, bool]:
        return {a: self.significant(a) for a in ALPHAS}


def summarize(values) -> RunSummary:
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("summaries need at least two values")
    return RunSummary(float(x.mean()), float(x.std(ddof=1)), float(x.max()), float(x.min()), int(x.size))


def kolmogorov_sf(y: float) -> float:
    """Survival function of the limiting Kolmogorov distribution."""
    if y <= 0:
        return 1.0
    if y < 1.0:
        # theta-function form of the cdf converges fast for small y
        c = math.pi ** 2 / (8.0 * y * y)
        cdf = math.sqrt(2.0 * math.pi) / y * sum(math.exp(-(2 * k - 1) ** 2 * c) for k in range(1, 20))
        return min(1.0, max(0.0, 1.0 - cdf))
    total, k = 0.0, 1
    while True:
        term = math.exp(-2.0 * k * k * y * y)
        total += term if k % 2 else -term
        if term < 1e-17:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def _normal_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * np.array([math.erfc(-v / math.sqrt(2.0)) for v in z])


def ks_normality(sample) -> TestOutcome:
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n < 5:
        raise ValueError("K-S normality test needs at least 5 values")
    sd = x.std(ddof=1)
    if sd == 0:
        raise ValueError("K-S normality test on a constant sample")
    cdf = _normal_cdf((x - x.mean()) / sd)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return TestOutcome(d, kolmogorov_sf(d * math.sqrt(n)))


def levene(a, b) -> TestOutcome:
    """Two-group Levene test with deviations from the group means."""
    groups = [np.asarray(g, dtype=float) for g in (a, b)]
    if min(g.size for g in groups) < 3:
        raise ValueError("Levene test needs at least 3 values per group")
    z = [np.abs(g - g.mean()) for g in groups]
    n = np.array([g.size for g in groups])
    total = n.sum()
    zbar = np.array([zi.mean() for zi in z])
    grand = np.concatenate(z).mean()
    between = float(np.sum(n * (zbar - grand) ** 2))
    within = float(sum(np.sum((zi - m) ** 2) for zi, m in zip(z, zbar)))
    df1, df2 = len(groups) - 1, int(total - len(groups))
    if within == 0:
        if between == 0:
            return TestOutcome(0.0, 1.0, (df1, df2))
        raise ValueError("Levene test is undefined when both groups are constant")
    w = (df2 / df1) * between / within
    return TestOutcome(w, float(special.fdtrc(df1, df2, w)), (df1, df2))


def t_test(a, b, equal_variances: bool = True) -> TestOutcome:
    """Two-sided independent-samples t test (pooled or Welch)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("t test needs at least 2 values per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = a.mean() - b.mean()
    if equal_variances:
        df = na + nb - 2
        se = math.sqrt(((na - 1) * va + (nb - 1) * vb) / df * (1 / na + 1 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        # scale-free form of Welch-Satterthwaite; avoids underflow in the squares
        ra, rb = (qa / (qa + qb), qb / (qa + qb)) if se > 0 else (0.5, 0.5)
        df = 1.0 / (ra ** 2 / (na - 1) + rb ** 2 / (nb - 1))
    if se == 0:
        if diff == 0:
            return TestOutcome(0.0, 1.0, df)
        raise ValueError("t test is undefined for constant groups with different means")
    t = diff / se
    p = 2.0 * special.stdtr(df, -abs(t))
    return TestOutcome(float(t), float(min(1.0, p)), float(df))


@dataclass
class MetricComparison:
    metric: str
    base: RunSummary
    best: RunSummary
    normality: dict[str, TestOutcome | None]
    variances: TestOutcome
    means: TestOutcome
    equal_variances: bool

    def rows(self) -> list[dict]:
        def row(test, group, outcome):
            if outcome is None:
                return {"metric": self.metric, "test": test, "group": group,
                        "statistic": "", "p_value": "", "sig_0.05": "", "sig_0.01": ""}
            return {"metric": self.metric, "test": test, "group": group,
                    "statistic": outcome.statistic, "p_value": outcome.p_value,
                    "sig_0.05": outcome.significant(0.05), "sig_0.01": outcome.significant(0.01)}

        out = [row("ks_normality", g, o) for g, o in self.normality.items()]
        out.append(row("levene", "base-vs-best", self.variances))
        out.append(row("t_test_pooled" if self.equal_variances else "t_test_welch", "base-vs-best", self.means))
        return out


@dataclass
class ComparisonReport:
    dataset: str
    metrics: list[MetricComparison] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [dict(dataset=self.dataset, **r) for m in self.metrics for r in m.rows()]

    def narrative(self) -> str:
        lines = [f"{self.dataset}: base configuration vs best configuration"]
        for m in self.metrics:
            lines.append(f"  {m.metric}: base {m.base.format_row()}  |  best {m.best.format_row()}")
            for group, o in m.normality.items():
                if o is None:
                    lines.append(f"    K-S ({group}): constant sample, normality not testable")
                    continue
                level = next((a for a in ALPHAS if o.p_value > a), None)
                verdict = (f"compatible with a normal distribution (Sig = {o.p_value:.3f} > {level})"
                           if level else f"departs from normality (Sig = {o.p_value:.3f})")
                lines.append(f"    K-S ({group}): {verdict}")
            lines.append("    Levene: " + _verdict(m.variances, "variances"))
            kind = "equal" if m.equal_variances else "different"
            lines.append(f"    t test ({kind} variances): " + _verdict(m.means, "mean values"))
        lines.append("  Notes: K-S uses estimated normal parameters with the asymptotic p-value;"
                     " Levene is mean-centred; t tests are two-sided.")
        return "\n".join(lines)


def _verdict(outcome: TestOutcome, what: str) -> str:
    if outcome.significant(0.01):
        return f"significant differences in the {what} at alpha = 0.01 (Sig = {outcome.p_value:.3f})"
    if outcome.significant(0.05):
        return f"significant differences in the {what} at alpha = 0.05 (Sig = {outcome.p_value:.3f})"
    return f"no significant differences in the {what} (Sig = {outcome.p_value:.3f})"


def _compare_metric(metric: str, base, best) -> MetricComparison:
    base = np.asarray(base, dtype=float)
    best = np.asarray(best, dtype=float)
    normality = {}
    for group, x in (("base", base), ("best", best)):
        normality[group] = ks_normality(x) if x.size >= 5 and x.std() > 0 else None
    var = levene(base, best)
    equal = not var.significant(0.05)
    return MetricComparison(metric, summarize(base), summarize(best), normality, var,
                            t_test(best, base, equal_variances=equal), equal)


def compare_configs(base_runs: list[dict], best_runs: list[dict]) -> ComparisonReport:
    """Compare generalization CCR and connection counts of two run sets.

    Each run is a mapping with ``test_ccr`` and ``connections`` (and
    optionally ``dataset``).
    """
    datasets = {str(r.get("dataset", "")).lower() for r in base_runs + best_runs} - {""}
    if len(datasets) > 1:
        raise ValueError(f"run sets come from different datasets: {sorted(datasets)}")
    name = next((str(r["dataset"]) for r in base_runs + best_runs if r.get("dataset")), "dataset")
    report = ComparisonReport(name)
    for metric, key in (("CCR", "test_ccr"), ("connections", "connections")):
        report.metrics.append(_compare_metric(
            metric, [float(r[key]) for r in base_runs], [float(r[key]) for r in best_runs]))
    return report
