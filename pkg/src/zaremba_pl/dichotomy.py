"""Wiener-type series, growth/decay classification and asymptotic checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .coefficients import DegenerationProfile, validate_degeneration
from .growth import C_ABS_DEFAULT, GrowthConstants, layer_term

LN2 = math.log(2.0)


# --------------------------------------------------------------------------
# Series
# --------------------------------------------------------------------------


@dataclass
class SeriesData:
    js: np.ndarray
    terms: np.ndarray
    partial: np.ndarray
    saturated: np.ndarray
    verdict: str  # divergent | convergent | undetermined (heuristic)
    evidence: dict = field(default_factory=dict)

    def S(self, j: int) -> float:
        k = np.searchsorted(self.js, j)
        if k >= len(self.js) or self.js[k] != j:
            raise KeyError(j)
        return float(self.partial[k])

    def to_dict(self) -> dict:
        return {
            "js": self.js.tolist(),
            "terms": self.terms.tolist(),
            "partial": self.partial.tolist(),
            "saturated": self.saturated.tolist(),
            "verdict": self.verdict,
            "evidence": self.evidence,
        }


def _cumsum_exact(x: np.ndarray) -> np.ndarray:
    out = np.empty(len(x))
    acc: list[float] = []
    for k, v in enumerate(x):
        acc.append(float(v))
        out[k] = math.fsum(acc)
    return out


def series_terms(terms: Sequence[float], js: Sequence[int] | None = None, tail_slope_tol: float = 0.05) -> SeriesData:
    """Partial sums of the growth terms with a labelled divergence heuristic.

    The verdict compares the log-log slope of the tail terms (Theil-Sen)
    with -1: slopes above -1 - tol look divergent.  It is evidence over the
    window, not a proof.
    """
    t = np.asarray(terms, dtype=float)
    js = np.arange(1, len(t) + 1) if js is None else np.asarray(js, dtype=int)
    if len(js) != len(t):
        raise ValueError("terms and indices differ in length")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("series terms must be finite and non-negative")
    sat = t >= 1
    S = _cumsum_exact(t)
    ev: dict = {}
    if len(t) < 4:
        verdict = "undetermined"
    elif np.all(t == 0):
        verdict = "convergent"
        ev["reason"] = "all terms vanish"
    else:
        half = len(t) // 2
        tail_j, tail_t = js[half:], t[half:]
        pos = tail_t > 0
        if pos.sum() < 2:
            verdict = "convergent"
            ev["reason"] = "tail terms vanish"
        else:
            slope = stats.theilslopes(np.log(tail_t[pos]), np.log(tail_j[pos]))[0]
            ev["tail_loglog_slope"] = float(slope)
            verdict = "divergent" if slope >= -1 - tail_slope_tol else "convergent"
        lin = np.polyfit(js.astype(float), S, 1)
        ev["linear_fit_slope"] = float(lin[0])
        ev["log_fit_slope"] = float(np.polyfit(np.log(js.astype(float)), S, 1)[0])
    return SeriesData(js, t, S, sat, verdict, ev)


def series_from_layers(
    layer_caps: dict,
    layers,
    js: Sequence[int],
    C_abs: float = C_ABS_DEFAULT,
    form: str = "packaged",
    alpha: float = 0.5,
) -> SeriesData:
    """Series of kappa_j C(H_j) R_j^-s_j from per-layer capacity records keyed by j."""
    missing = [j for j in js if j not in layer_caps]
    if missing:
        raise KeyError(f"missing layer capacities for j = {missing}")
    terms = []
    for j in js:
        lc = layer_caps[j]
        consts = GrowthConstants(layers.a, layers.q, layers.N0, lc.s, alpha)
        terms.append(layer_term(lc.varkappa, lc.C_H.lower, layers.R(j), consts, C_abs, form))
    return series_terms(terms, js)


# --------------------------------------------------------------------------
# Classification and envelopes
# --------------------------------------------------------------------------


@dataclass
class Classification:
    kind: str  # growth | decay | undetermined
    tau_star: int | None = None
    first_violation: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def classify(M: Sequence[float], min_growth_run: int = 3) -> Classification:
    """Decay if strictly decreasing throughout; growth if strictly increasing from some index on."""
    M = np.asarray(M, dtype=float)
    if len(M) < 5:
        raise ValueError("need at least five values to classify")
    d = np.diff(M)
    if np.all(d < 0):
        return Classification("decay")
    # longest strictly increasing suffix
    k = len(M) - 1
    while k > 0 and d[k - 1] > 0:
        k -= 1
    if len(M) - k >= min_growth_run:
        return Classification("growth", tau_star=int(k))
    first_up = int(np.argmax(d >= 0))
    return Classification("undetermined", first_violation=first_up)


@dataclass
class EnvelopeReport:
    kind: str
    constant: float | None
    slope: float | None
    slope_ci: tuple[float, float] | None
    passed: bool
    ratio: list = field(default_factory=list)
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def envelopes(S: SeriesData | Sequence[float], M: Sequence[float], classification: Classification | str, tol: float = 1e-9) -> EnvelopeReport:
    """Fit c1 = min M/2^S (growth) or c2 = max M 2^S (decay) over the tail half.

    Growth passes when c1 > 0 and the tail of log(M/2^S) has no downward
    Theil-Sen trend; decay passes when c2 is finite and the tail of
    log(M 2^S) does not trend upward.
    """
    kind = classification.kind if isinstance(classification, Classification) else classification
    partial = S.partial if isinstance(S, SeriesData) else np.asarray(S, dtype=float)
    M = np.asarray(M, dtype=float)
    if len(partial) != len(M):
        raise ValueError("series and M sequence differ in length")
    if kind not in ("growth", "decay"):
        return EnvelopeReport(kind, None, None, None, False, reason="classification is undetermined")
    sign = -1.0 if kind == "growth" else 1.0
    with np.errstate(divide="ignore"):
        ratio = M * np.exp2(sign * partial)
    half = len(M) // 2
    tail = ratio[half:]
    idx = np.arange(len(tail), dtype=float)
    if np.any(tail <= 0):
        return EnvelopeReport(kind, None, None, None, False, ratio.tolist(), "non-positive values in the tail")
    res = stats.theilslopes(np.log(tail), idx)
    slope, lo, hi = float(res[0]), float(res[2]), float(res[3])
    if kind == "growth":
        c = float(tail.min())
        ok = c > 0 and slope >= -tol
    else:
        c = float(tail.max())
        ok = math.isfinite(c) and slope <= tol
    return EnvelopeReport(kind, c, slope, (lo, hi), bool(ok), ratio.tolist())


def truncation_sensitivity(M_short: Sequence[float], M_long: Sequence[float]) -> float:
    """max |M_long / M_short - 1| over a common window."""
    a = np.asarray(M_short, dtype=float)
    b = np.asarray(M_long, dtype=float)
    return float(np.max(np.abs(b / a - 1)))


@dataclass
class DichotomyReport:
    js: list
    taus: list
    M: list
    classification: Classification
    series: SeriesData
    envelope: EnvelopeReport
    truncation: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "js": self.js,
            "taus": self.taus,
            "M": self.M,
            "classification": self.classification.to_dict(),
            "series": self.series.to_dict(),
            "envelope": self.envelope.to_dict(),
            "truncation_sensitivity": self.truncation,
            **self.extra,
        }

    def csv_rows(self) -> list[list]:
        sign = 1.0 if self.classification.kind == "growth" else -1.0
        rows = [["j", "tau", "M", "S", "envelope"]]
        for j, t, m, s in zip(self.js, self.taus, self.M, self.series.partial):
            rows.append([j, t, m, float(s), float(2.0 ** (sign * s))])
        return rows


# --------------------------------------------------------------------------
# Funnel sums and asymptotics
# --------------------------------------------------------------------------


def _s_values(s_sequence, j: np.ndarray) -> np.ndarray:
    if callable(s_sequence):
        return np.asarray(s_sequence(j), dtype=float)
    s = np.asarray(s_sequence, dtype=float)
    if s.ndim == 0:
        return np.full(len(j), float(s))
    if len(s) < len(j):
        raise ValueError("s sequence shorter than N")
    return s[: len(j)]


@dataclass
class FunnelSum:
    N: np.ndarray
    S: np.ndarray


def funnel_sum(lam: float, s_sequence, N: int, checkpoints: Sequence[int] | None = None, start: int = 1) -> FunnelSum:
    """Compensated partial sums of lam^s_j for j = start..N at the checkpoints (default: every N)."""
    if not 0 < lam < 0.5:
        raise ValueError("lambda must lie in (0, 1/2)")
    j = np.arange(start, N + 1, dtype=float)
    terms = lam ** _s_values(s_sequence, j)
    if checkpoints is None:
        return FunnelSum(j.astype(int), _cumsum_blocks(terms))
    cps = np.asarray(sorted(checkpoints), dtype=int)
    if cps[0] < start or cps[-1] > N:
        raise ValueError("checkpoints outside the summation range")
    out, acc, prev = [], [], 0
    for c in cps:
        acc.append(math.fsum(terms[prev : c - start + 1]))
        prev = c - start + 1
        out.append(math.fsum(acc))
    return FunnelSum(cps, np.array(out))


def _cumsum_blocks(terms: np.ndarray, block: int = 4096) -> np.ndarray:
    """Running sums with an exact (fsum) carry between blocks."""
    out = np.empty(len(terms))
    carry = 0.0
    for s in range(0, len(terms), block):
        seg = terms[s : s + block]
        out[s : s + len(seg)] = carry + np.cumsum(seg)
        carry = math.fsum([carry, math.fsum(seg)])
        out[s + len(seg) - 1] = carry
    return out


@dataclass
class AsymptoticRow:
    N: int
    exact: float
    predicted: float
    ratio: float


@dataclass
class AsymptoticReport:
    rows: list[AsymptoticRow]
    lam: float
    corrected: bool
    trend_ok: bool

    def to_dict(self) -> dict:
        return {"lam": self.lam, "corrected": self.corrected, "trend_ok": self.trend_ok, "rows": [asdict(r) for r in self.rows]}


class DegenerationInvalid(ValueError):
    pass


def degenerate_sum_asymptotic(
    p: DegenerationProfile,
    lam: float,
    Ns: Sequence[int],
    corrected: bool = True,
    check: bool = True,
) -> AsymptoticReport:
    """Sum_{2 <= j <= N} lam^(p(j) ln j) against N^(1 + p(N) ln lam).

    s_j is only defined for j > 1 (ln 1 = 0 and p(1) may be infinite), so the
    sum starts at j = 2.  With ``corrected=False`` the prediction drops the
    p(N) ln lam term and becomes N itself (negative control).
    """
    if not 0 < lam < 1:
        raise ValueError("need 0 < lambda < 1 so that ln lambda < 0")
    Ns = sorted(int(n) for n in Ns)
    if check:
        rep = validate_degeneration(p, (max(2.0, 10.0), float(Ns[-1])))
        if not rep.valid:
            raise DegenerationInvalid(rep.reason)
    j = np.arange(2, Ns[-1] + 1, dtype=float)
    terms = np.exp(p.s_sequence(j) * math.log(lam))
    rows, acc, prev = [], [], 0
    for N in Ns:
        acc.append(math.fsum(terms[prev : N - 1]))
        prev = N - 1
        exact = math.fsum(acc)
        expo = 1 + float(p(N)) * math.log(lam) if corrected else 1.0
        pred = float(N) ** expo
        rows.append(AsymptoticRow(N, exact, pred, exact / pred))
    dev = np.abs(np.array([r.ratio for r in rows]) - 1)
    return AsymptoticReport(rows, lam, corrected, bool(np.all(np.diff(dev) < 0)))


# --------------------------------------------------------------------------
# Envelopes in r
# --------------------------------------------------------------------------


def rate_envelopes_r(
    alpha: float,
    kind: str = "uniform",
    c_hat: float = 1.0,
    sign: int = 1,
    c_bar: float = 1.0,
    p: Callable | None = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """exp(+-c r^(1-alpha)) or exp(+-c r^((1-alpha)(1 - c_bar p(r^(1-alpha)))))."""
    if alpha >= 1:
        raise ValueError("alpha must be below 1")
    if kind not in ("uniform", "degenerate"):
        raise ValueError("kind must be 'uniform' or 'degenerate'")
    if kind == "degenerate" and p is None:
        raise ValueError("degenerate envelope needs p")
    g = 1.0 - alpha
    sgn = 1.0 if sign >= 0 else -1.0

    def env(r):
        r = np.asarray(r, dtype=float)
        if kind == "uniform":
            return np.exp(sgn * c_hat * r**g)
        return np.exp(sgn * c_hat * r ** (g * (1 - c_bar * np.asarray(p(r**g)))))

    return env


def envelope_consistency(alpha: float, lam: float, s: float, Ns: Sequence[int]) -> float:
    """Largest relative gap between 2^S_N and exp(c r^(1-alpha)) at r = tau_N = N^(1/(1-alpha)).

    For constant s the series is S_N = N lam^s, so c = lam^s ln 2 matches exactly.
    """
    Ns = np.asarray(Ns, dtype=int)
    fs = funnel_sum(lam, s, int(Ns.max()), checkpoints=Ns)
    r = Ns.astype(float) ** (1 / (1 - alpha))
    env = rate_envelopes_r(alpha, "uniform", c_hat=lam**s * LN2)
    return float(np.max(np.abs(np.log(env(r)) - fs.S * LN2) / (fs.S * LN2)))
