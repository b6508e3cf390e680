"""GEO-BLEU and DTW trajectory similarity, plus per-user reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .core import uid_sort_key


class MetricsError(ValueError):
    pass


def _as_points(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.float64).reshape(-1, 2)
    if len(arr) == 0:
        raise MetricsError("empty point sequence")
    return arr


def dtw_distance(pred, truth) -> float:
    """Unconstrained DTW with Euclidean point cost in cell units.

    Alignments start at the first pair, end at the last pair and advance by
    (1,0), (0,1) or (1,1).
    """
    a, b = _as_points(pred), _as_points(truth)
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).tolist()
    m = len(b)
    inf = math.inf
    prev = [inf] * (m + 1)
    prev[0] = 0.0
    for row in cost:
        cur = [inf] * (m + 1)
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = row[j - 1] + best
        prev = cur
    return prev[m]


@dataclass(frozen=True)
class GeoBleuParams:
    max_n: int = 3
    weights: Tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    beta: float = 0.5
    matching: str = "greedy"

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")
        if len(self.weights) != self.max_n:
            raise ValueError("need one weight per n-gram order")
        if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0, abs_tol=1e-9):
            raise ValueError("weights must be non-negative and sum to 1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.matching not in ("greedy", "optimal"):
            raise ValueError("matching must be 'greedy' or 'optimal'")

    @classmethod
    def with_order(cls, max_n: int, beta: float = 0.5, matching: str = "greedy") -> "GeoBleuParams":
        return cls(max_n, tuple([1 / max_n] * max_n), beta, matching)


def ngram_similarity(pred: np.ndarray, truth: np.ndarray, n: int, beta: float) -> np.ndarray:
    """``(P, T)`` matrix of ``prod_k exp(-beta * d_k)`` over aligned n-gram positions."""
    d = np.sqrt(((pred[:, None, :] - truth[None, :, :]) ** 2).sum(-1))
    p, t = len(pred) - n + 1, len(truth) - n + 1
    total = np.zeros((p, t))
    for k in range(n):
        total += d[k:k + p, k:k + t]
    return np.exp(-beta * total)


def _greedy_match(sim: np.ndarray) -> float:
    flat = sim.ravel()
    order = np.argsort(-flat, kind="stable")
    used_r = np.zeros(sim.shape[0], dtype=bool)
    used_c = np.zeros(sim.shape[1], dtype=bool)
    total = 0.0
    left = min(sim.shape)
    ncol = sim.shape[1]
    for idx in order.tolist():
        s = flat[idx]
        if s == 0.0 or left == 0:
            break
        r, c = divmod(idx, ncol)
        if used_r[r] or used_c[c]:
            continue
        used_r[r] = used_c[c] = True
        total += s
        left -= 1
    return total


def _optimal_match(sim: np.ndarray) -> float:
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(sim, maximize=True)
    return float(sim[rows, cols].sum())


def geo_bleu(pred, truth, params: GeoBleuParams = GeoBleuParams()) -> float:
    """Spatially softened n-gram precision with a brevity penalty, in [0, 1].

    For each order n the predicted n-grams are paired one-to-one with truth
    n-grams by descending similarity; the precision is the summed similarity
    over the number of predicted n-grams. Orders with no n-grams on either side
    are dropped and the remaining weights renormalized.
    """
    a, b = _as_points(pred), _as_points(truth)
    match = _greedy_match if params.matching == "greedy" else _optimal_match
    log_sum, weight_sum = 0.0, 0.0
    for n, w in zip(range(1, params.max_n + 1), params.weights):
        if len(a) < n or len(b) < n:
            continue
        sim = ngram_similarity(a, b, n, params.beta)
        precision = match(sim) / sim.shape[0]
        weight_sum += w
        if w == 0:
            continue
        if precision <= 0.0:
            return 0.0
        log_sum += w * math.log(precision)
    if weight_sum == 0:
        return 0.0
    bp = min(1.0, math.exp(1.0 - len(b) / len(a)))
    return min(1.0, bp * math.exp(log_sum / weight_sum))


@dataclass
class UserMetrics:
    uid: str
    geobleu: float
    dtw: float


@dataclass
class MetricsReport:
    users: List[UserMetrics]
    params: GeoBleuParams
    extra: Dict[str, object] = field(default_factory=dict)

    @property
    def mean_geobleu(self) -> float:
        return float(np.mean([u.geobleu for u in self.users]))

    @property
    def mean_dtw(self) -> float:
        return float(np.mean([u.dtw for u in self.users]))

    def to_dict(self) -> dict:
        params = asdict(self.params)
        params["weights"] = list(self.params.weights)
        params["similarity"] = "exp(-beta * euclidean_cell_distance), product over n-gram positions"
        params["brevity_penalty"] = "min(1, exp(1 - len(truth) / len(pred)))"
        params["dtw_cost"] = "euclidean distance in cell units"
        return {
            "users": [asdict(u) for u in self.users],
            "aggregate": {"num_users": len(self.users), "geobleu": self.mean_geobleu, "dtw": self.mean_dtw},
            "params": params,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"{'uid':>12}  {'geobleu':>9}  {'dtw':>10}"]
        for u in self.users:
            lines.append(f"{u.uid:>12}  {u.geobleu:9.4f}  {u.dtw:10.3f}")
        lines.append(f"{'mean':>12}  {self.mean_geobleu:9.4f}  {self.mean_dtw:10.3f}")
        return "\n".join(lines)


def evaluate(predictions: Mapping[str, Sequence], truths: Mapping[str, Sequence],
             params: GeoBleuParams = GeoBleuParams()) -> MetricsReport:
    """Per-user GEO-BLEU and DTW; user sets must match exactly."""
    missing = sorted(set(truths) - set(predictions), key=uid_sort_key)
    if missing:
        raise MetricsError(f"no predictions for user {missing[0]!r}")
    extra = sorted(set(predictions) - set(truths), key=uid_sort_key)
    if extra:
        raise MetricsError(f"no ground truth for user {extra[0]!r}")
    users = []
    for uid in sorted(truths, key=uid_sort_key):
        pred = np.asarray(predictions[uid]).reshape(-1, 2)
        if len(pred) == 0:
            raise MetricsError(f"empty prediction for user {uid!r}")
        truth = truths[uid]
        users.append(UserMetrics(uid, geo_bleu(pred, truth, params), dtw_distance(pred, truth)))
    return MetricsReport(users, params)
