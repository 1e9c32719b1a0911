"""Accuracy reports, Student-t confidence intervals and two-sample t-tests."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# --- t distribution ------------------------------------------------------------

_BETACF_EPS = 1e-16
_BETACF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _BETACF_TINY if abs(d) < _BETACF_TINY else d
        c = 1.0 + aa / c
        c = _BETACF_TINY if abs(c) < _BETACF_TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _BETACF_TINY if abs(d) < _BETACF_TINY else d
        c = 1.0 + aa / c
        c = _BETACF_TINY if abs(c) < _BETACF_TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * t_two_sided_p(t, df)
    return 1.0 - tail if t > 0 else tail


def t_ppf(q: float, df: float) -> float:
    """Quantile of Student's t by bracketing and bisection on :func:`t_cdf`."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while t_cdf(lo, df) > q:
        lo *= 2.0
    while t_cdf(hi, df) < q:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


# --- confidence intervals and t-tests ------------------------------------------

def _sample(runs) -> np.ndarray:
    x = np.asarray(list(runs), dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("runs must be a flat list of numbers")
    return x


def confidence_interval(runs, level: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t half-width ``t_{(1+level)/2, n-1} * s / sqrt(n)``."""
    x = _sample(runs)
    n = x.size
    if n < 2:
        raise ValueError("need at least two runs for a confidence interval")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    s = float(np.std(x, ddof=1))
    half = t_ppf(0.5 + level / 2.0, n - 1) * s / math.sqrt(n) if s > 0 else 0.0
    return float(np.mean(x)), half


@dataclass
class SignificanceResult:
    mean_a: float
    mean_b: float
    ci95_a: float
    ci95_b: float
    t_statistic: float
    p_value: float
    df: float
    alpha_level: float = 0.05
    significant: bool = False
    equal_var: bool = True
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def ttest_two_sample(runs_a, runs_b, equal_var: bool = True, alpha_level: float = 0.05) -> SignificanceResult:
    """Two-sided two-sample t-test (pooled variance; Welch when ``equal_var`` is false).

    ``t`` is positive when group A has the larger mean. If both groups have
    zero variance and equal means the p-value is reported as 1.0 and
    ``degenerate`` is set.
    """
    a, b = _sample(runs_a), _sample(runs_b)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two runs")
    ma, mb = float(np.mean(a)), float(np.mean(b))
    va, vb = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    if equal_var:
        df = float(na + nb - 2)
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa ** 2 / (na - 1) + qb ** 2 / (nb - 1)) if se > 0 else float(na + nb - 2)
    degenerate = False
    if se == 0.0:
        degenerate = True
        if ma == mb:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, ma - mb), 0.0
    else:
        t = (ma - mb) / se
        p = t_two_sided_p(t, df)
    p = min(1.0, max(0.0, p))
    return SignificanceResult(
        mean_a=ma, mean_b=mb,
        ci95_a=confidence_interval(a)[1], ci95_b=confidence_interval(b)[1],
        t_statistic=t, p_value=p, df=df, alpha_level=alpha_level,
        significant=p < alpha_level, equal_var=equal_var, degenerate=degenerate,
    )


# --- accuracy ----------------------------------------------------------------------

class ScoresError(ValueError):
    pass


@dataclass
class EvalReport:
    method: str
    top1: float
    n_eval: int
    confusion: list
    per_class: dict = field(default_factory=dict)
    class_names: list = field(default_factory=list)
    kind: str = "single_run"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def read_scores(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if fields[:3] != ["utterance_id", "true_label", "predicted"]:
            raise ScoresError(f"{path}: unexpected header {fields[:3]}")
        n = len(fields) - 3
        if fields[3:] != [f"p{i:02d}" for i in range(n)]:
            raise ScoresError(f"{path}: posterior columns must be p00..p{n - 1:02d}")
        rows = []
        for r in reader:
            rows.append({"utterance_id": r["utterance_id"], "true_label": int(r["true_label"]),
                         "predicted": int(r["predicted"]),
                         "posteriors": [float(r[f]) for f in fields[3:]]})
    return rows


def accuracy(scores, method: str = "", n_classes: int | None = None, class_names: Sequence[str] | None = None,
             expected_ids=None) -> EvalReport:
    """Top-1 accuracy (%), confusion matrix and per-class accuracy.

    ``scores`` is a scores.csv path or rows with ``utterance_id``,
    ``true_label`` and ``predicted``. Duplicate ids, and ids missing relative to
    ``expected_ids``, raise :class:`ScoresError`.
    """
    rows = read_scores(scores) if isinstance(scores, (str, Path)) else list(scores)
    ids = [r["utterance_id"] for r in rows]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})[:3]
        raise ScoresError(f"duplicate utterance ids in scores: {dup}")
    if expected_ids is not None:
        missing = set(expected_ids) - set(ids)
        if missing:
            raise ScoresError(f"{len(missing)} utterances were not scored, e.g. {sorted(missing)[:3]}")
    if n_classes is None:
        if class_names:
            n_classes = len(class_names)
        elif rows and "posteriors" in rows[0]:
            n_classes = len(rows[0]["posteriors"])
        else:
            n_classes = 1 + max([max(r["true_label"], r["predicted"]) for r in rows], default=-1)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    for r in rows:
        conf[r["true_label"], r["predicted"]] += 1
    n = len(rows)
    names = list(class_names) if class_names else [str(i) for i in range(n_classes)]
    support = conf.sum(axis=1)
    per_class = {names[c]: (100.0 * conf[c, c] / support[c] if support[c] else float("nan"))
                 for c in range(n_classes)}
    top1 = 100.0 * int(np.trace(conf)) / n if n else float("nan")
    return EvalReport(method, top1, n, conf.tolist(), per_class, names)


# --- report files -----------------------------------------------------------------

TABLE2_FIELDS = ["method", "accuracy", "n_eval", "kind"]
CLASSWISE_FIELDS = ["method", "class_index", "class_name", "support", "accuracy"]
SWEEP_FIELDS = ["method", "alpha", "accuracy"]
TABLE3_FIELDS = ["comparison", "mean_a", "ci95_a", "mean_b", "ci95_b", "t_statistic", "p_value",
                 "df", "alpha_level", "significant"]


def _num(x) -> str:
    return repr(float(x))


def emit_report(out_dir, reports: Sequence[EvalReport] = (), significance: dict | None = None,
                sweeps: dict | None = None) -> dict:
    """Write report.json, table2.csv, classwise.csv, sweep.csv and table3.csv.

    ``significance`` maps a comparison name to a SignificanceResult and
    ``sweeps`` maps a method name to ``[(alpha, accuracy), ...]``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    significance = significance or {}
    sweeps = sweeps or {}
    doc = {
        "schema_version": 1,
        "reports": [r.to_dict() for r in reports],
        "significance": {k: v.to_dict() for k, v in significance.items()},
        "sweeps": {k: [[float(a), float(acc)] for a, acc in rows] for k, rows in sweeps.items()},
    }
    (out / "report.json").write_text(json.dumps(doc, indent=2))

    with open(out / "table2.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE2_FIELDS)
        for r in reports:
            w.writerow([r.method, _num(r.top1), r.n_eval, r.kind])
    with open(out / "classwise.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CLASSWISE_FIELDS)
        for r in reports:
            for c, name in enumerate(r.class_names):
                w.writerow([r.method, c, name, int(sum(r.confusion[c])), _num(r.per_class[name])])
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_FIELDS)
        for method, rows in sweeps.items():
            for a, acc in rows:
                w.writerow([method, f"{float(a):.2f}", _num(acc)])
    with open(out / "table3.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE3_FIELDS)
        for name, s in significance.items():
            w.writerow([name, _num(s.mean_a), _num(s.ci95_a), _num(s.mean_b), _num(s.ci95_b),
                        _num(s.t_statistic), _num(s.p_value), _num(s.df), _num(s.alpha_level),
                        int(s.significant)])
    return doc


def load_report(path) -> tuple[list[EvalReport], dict, dict]:
    doc = json.loads(Path(path).read_text())
    reports = [EvalReport.from_dict(d) for d in doc["reports"]]
    sig = {k: SignificanceResult(**v) for k, v in doc["significance"].items()}
    sweeps = {k: [(a, acc) for a, acc in rows] for k, rows in doc["sweeps"].items()}
    return reports, sig, sweeps


def read_runs(path) -> list[float]:
    """Per-seed accuracies from a CSV: an ``accuracy`` column, or the first column."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and r[0].strip()]
    if not rows:
        return []
    header = [c.strip().lower() for c in rows[0]]
    try:
        float(rows[0][0])
    except ValueError:
        col = header.index("accuracy") if "accuracy" in header else 0
        return [float(r[col]) for r in rows[1:]]
    return [float(r[0]) for r in rows]
