"""
Video Drift Error.

A video is split into N segments of (nearly) equal duration, a quality
score Q_i is computed per segment, and drift is the weighted sum of the
absolute relative changes against the first segment:

    delta_i = (Q_i - Q_1) / Q_1                 i = 2..N
    VDE     = sum_i w_i · |delta_i|
    w_i     = N - i + 1        (linear)
              ln(N - i + 2)    (log)

Also here: MAPE / WMAPE and the report files written by `evaluate`.

Usage:
    report = evaluate(video, VDEConfig(n_segments=5))
    report.write_json("out/report.json")
    report.write_csv("out/report.csv")
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from chunkvid.errors import ChunkvidError, ConfigError, FormatError, RangeError, ReferenceScoreError
from chunkvid.scorers import METRICS, FrameSequence, ScorerPlugins, segment_scores

WEIGHT_KINDS = ("linear", "log")
MOTION_KINDS = ("energy", "smoothness")


@dataclass
class VDEConfig:
    n_segments: int = 4
    weight_kind: str = "linear"

    # Background staticness threshold, in flow units (pixels/frame or intensity/frame)
    flow_tau: float = 0.05

    epsilon_guard: float = 1e-9
    motion_kind: str = "energy"

    # Metrics scored concurrently; results merge in fixed order
    workers: int = 1

    def validate(self) -> "VDEConfig":
        if self.n_segments < 2:
            raise ConfigError(f"n_segments must be >= 2, got {self.n_segments}", section="vde")
        if self.weight_kind not in WEIGHT_KINDS:
            raise ConfigError(f"weight_kind must be linear or log, got {self.weight_kind!r}",
                              section="vde")
        if not self.flow_tau > 0:
            raise ConfigError(f"flow_tau must be > 0, got {self.flow_tau}", section="vde")
        if not self.epsilon_guard > 0:
            raise ConfigError("epsilon_guard must be > 0", section="vde")
        if self.motion_kind not in MOTION_KINDS:
            raise ConfigError(f"motion_kind must be energy or smoothness, got {self.motion_kind!r}",
                              section="vde")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", section="vde")
        return self


# =============================================================================
# Forecast Error Metrics
# =============================================================================

def _pair(y: Sequence[float], yhat: Sequence[float], name: str):
    y_arr = np.asarray(y, dtype=np.float64)
    yhat_arr = np.asarray(yhat, dtype=np.float64)
    if y_arr.shape != yhat_arr.shape or y_arr.ndim != 1 or y_arr.size == 0:
        raise RangeError(f"{name} needs two non-empty lists of equal length")
    return y_arr, yhat_arr


def mape(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent."""
    y_arr, yhat_arr = _pair(y, yhat, "mape")
    if (y_arr == 0).any():
        raise RangeError("MAPE undefined at zero actual")
    return float(100.0 / y_arr.size * np.sum(np.abs((y_arr - yhat_arr) / y_arr)))


def wmape(y: Sequence[float], yhat: Sequence[float]) -> float:
    """sum|y - yhat| / sum|y|."""
    y_arr, yhat_arr = _pair(y, yhat, "wmape")
    denom = np.sum(np.abs(y_arr))
    if denom == 0:
        raise RangeError("WMAPE undefined when all actuals are zero")
    return float(np.sum(np.abs(y_arr - yhat_arr)) / denom)


# =============================================================================
# Drift
# =============================================================================

def split_segments(v: FrameSequence, n: int) -> List[FrameSequence]:
    """N contiguous segments; earlier ones take the remainder; each has >= 2 frames."""
    frames = len(v)
    if n < 2:
        raise RangeError(f"need at least 2 segments, got {n}")
    if n > frames // 2:
        raise RangeError(
            f"{n} segments of at least 2 frames do not fit in {frames} frames "
            f"(maximum {frames // 2})"
        )
    base, extra = divmod(frames, n)
    lengths = [base + 1] * extra + [base] * (n - extra)
    out, start = [], 0
    for length in lengths:
        out.append(v.slice(start, start + length))
        start += length
    return out


def rate_of_change(q: Sequence[float], epsilon_guard: float = 1e-9) -> List[float]:
    """(Q_i - Q_1) / Q_1 for i = 2..N; requires Q_1 > epsilon_guard."""
    if len(q) < 1:
        raise RangeError("score series is empty")
    q1 = float(q[0])
    if q1 <= epsilon_guard:
        raise ReferenceScoreError(q1, epsilon_guard)
    return [(float(qi) - q1) / q1 for qi in q[1:]]


def vde_weights(n: int, weight_kind: str) -> List[float]:
    """w_2..w_N."""
    if weight_kind == "linear":
        return [float(n - i + 1) for i in range(2, n + 1)]
    if weight_kind == "log":
        return [math.log(n - i + 2) for i in range(2, n + 1)]
    raise RangeError(f"unknown weight kind {weight_kind!r}")


def vde(q: Sequence[float], weight_kind: str = "linear", epsilon_guard: float = 1e-9) -> float:
    """
    Weighted drift of a score series.

    A series with every Q_i equal to Q_1 has zero drift, whatever Q_1 is.
    """
    if len(q) < 1:
        raise RangeError("score series is empty")
    if all(float(qi) == float(q[0]) for qi in q):
        return 0.0
    deltas = rate_of_change(q, epsilon_guard)
    weights = vde_weights(len(q), weight_kind)
    return float(sum(w * abs(d) for w, d in zip(weights, deltas)))


# =============================================================================
# Report
# =============================================================================

@dataclass
class MetricSeries:
    q: List[float]
    delta: List[float]
    weights: List[float]
    vde: float

    @classmethod
    def from_scores(cls, q: Sequence[float], cfg: VDEConfig) -> "MetricSeries":
        q = [float(x) for x in q]
        value = vde(q, cfg.weight_kind, cfg.epsilon_guard)
        if all(x == q[0] for x in q):
            deltas = [0.0] * (len(q) - 1)
        else:
            deltas = rate_of_change(q, cfg.epsilon_guard)
        return cls(q=q, delta=deltas, weights=vde_weights(len(q), cfg.weight_kind), vde=value)


@dataclass
class VDEReport:
    n_segments: int
    weight_kind: str
    segment_lengths: List[int] = field(default_factory=list)
    metrics: Dict[str, MetricSeries] = field(default_factory=dict)

    # metric -> reason it could not be computed
    failures: Dict[str, str] = field(default_factory=dict)

    def vde_values(self) -> Dict[str, Optional[float]]:
        return {m: (self.metrics[m].vde if m in self.metrics else None) for m in METRICS}

    def to_dict(self) -> dict:
        return {
            "metadata": {
                "n_segments": self.n_segments,
                "weight_kind": self.weight_kind,
                "segment_lengths": list(self.segment_lengths),
            },
            "metrics": {name: asdict(series) for name, series in self.metrics.items()},
            "failures": dict(self.failures),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VDEReport":
        try:
            meta = data["metadata"]
            return cls(
                n_segments=int(meta["n_segments"]),
                weight_kind=str(meta["weight_kind"]),
                segment_lengths=[int(x) for x in meta.get("segment_lengths", [])],
                metrics={name: MetricSeries(**series) for name, series in data["metrics"].items()},
                failures=dict(data.get("failures", {})),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError("<report>", f"malformed report ({exc})") from exc

    def write_json(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def read_json(cls, path: Union[str, Path]) -> "VDEReport":
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except json.JSONDecodeError as exc:
            raise FormatError(str(path), f"invalid JSON ({exc.msg})") from exc

    def write_csv(self, path: Union[str, Path]) -> None:
        """Flat rows: metric, segment (1-based), Q."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "segment", "Q"])
            for name, series in self.metrics.items():
                for i, q in enumerate(series.q, start=1):
                    writer.writerow([name, i, repr(q)])


def evaluate(
    v: FrameSequence,
    cfg: Optional[VDEConfig] = None,
    plugins: Optional[ScorerPlugins] = None,
) -> VDEReport:
    """
    Score all five metrics on one segmentation of `v`.

    A metric that fails (for example a near-zero reference score) is left
    out of `metrics` and its reason recorded in `failures`.
    """
    cfg = (cfg or VDEConfig()).validate()
    plugins = plugins or ScorerPlugins()
    segments = split_segments(v, cfg.n_segments)
    report = VDEReport(
        n_segments=cfg.n_segments,
        weight_kind=cfg.weight_kind,
        segment_lengths=[len(s) for s in segments],
    )

    def score(metric: str):
        try:
            q = segment_scores(segments, metric, plugins, cfg.flow_tau, cfg.motion_kind)
            return metric, MetricSeries.from_scores(q, cfg), None
        except ChunkvidError as exc:
            return metric, None, exc.message

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(score, METRICS))
    else:
        results = [score(m) for m in METRICS]

    for metric, series, reason in results:
        if series is not None:
            report.metrics[metric] = series
        else:
            report.failures[metric] = reason
    return report
