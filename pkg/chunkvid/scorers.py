"""
Per-segment quality scorers.

Five scores are computed for every segment of a video:

    clarity     Laplacian variance of the luminance, averaged over frames
    motion      mean per-pixel flow magnitude over consecutive frame pairs
    aesthetic   mean per-frame aesthetic score
    background  mean fraction of static background pixels
    subject     mean cosine similarity of the subject crop embedding to a
                reference embedding taken from the first segment

Learned components (flow, aesthetic predictor, subject encoder, background
mask, subject locator) are plugin seams in ScorerPlugins. When a plugin is
missing a classical proxy is used.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from chunkvid import tensor as T
from chunkvid.errors import DimensionError, RangeError, ZeroNormError
from chunkvid.tensor import Tensor

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                      [1.0, -4.0, 1.0],
                      [0.0, 1.0, 0.0]])

HISTOGRAM_BINS = 8


# =============================================================================
# Types
# =============================================================================

@dataclass
class FrameSequence:
    """Frames T × H × W × C with C in {1, 3} and values in [0, 1]."""
    frames: np.ndarray
    frame_rate: float = 8.0

    def __post_init__(self):
        data = self.frames.data if isinstance(self.frames, Tensor) else self.frames
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[..., None]
        if arr.ndim != 4 or arr.shape[-1] not in (1, 3):
            raise DimensionError("FrameSequence (expected T×H×W×C, C in {1,3})", arr.shape)
        if arr.shape[0] < 2:
            raise RangeError(f"a frame sequence needs at least 2 frames, got {arr.shape[0]}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise RangeError("frame values must lie in [0, 1]")
        if not self.frame_rate > 0:
            raise RangeError(f"frame_rate must be > 0, got {self.frame_rate}")
        arr.flags.writeable = False
        self.frames = arr

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]

    def slice(self, start: int, stop: int) -> "FrameSequence":
        return FrameSequence(self.frames[start:stop], self.frame_rate)


@dataclass
class FlowField:
    """Per-pixel displacement H × W × 2 in pixels per frame."""
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u.data if isinstance(self.u, Tensor) else self.u, dtype=np.float64)
        if u.ndim != 3 or u.shape[-1] != 2:
            raise DimensionError("FlowField (expected H×W×2)", u.shape)
        if not np.isfinite(u).all():
            raise RangeError("flow field must be finite")
        self.u = u

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u[..., 0] ** 2 + self.u[..., 1] ** 2)


Frame = np.ndarray
Box = Tuple[int, int, int, int]


@dataclass
class ScorerPlugins:
    """Injected scoring functions; each must be pure and deterministic."""
    aesthetic: Optional[Callable[[Frame], float]] = None
    subject_encoder: Optional[Callable[[Frame], np.ndarray]] = None
    flow_estimator: Optional[Callable[[Frame, Frame], FlowField]] = None
    background_mask: Optional[Callable[[Frame], np.ndarray]] = None

    # Returns (y0, y1, x0, x1) of the subject; center crop otherwise
    subject_locator: Optional[Callable[[Frame], Box]] = None


# =============================================================================
# Frame Helpers
# =============================================================================

def luminance(frame: Frame) -> np.ndarray:
    """H × W luminance of an H × W × C frame; C = 1 passes through."""
    if frame.shape[-1] == 1:
        return frame[..., 0]
    r, g, b = LUMA_WEIGHTS
    return r * frame[..., 0] + g * frame[..., 1] + b * frame[..., 2]


def laplacian_variance(frame: Frame) -> float:
    """Population variance of the 4-neighbour Laplacian, edges replicated."""
    response = ndimage.convolve(luminance(frame), LAPLACIAN, mode="nearest")
    return float(np.var(response))


def box_blur(frame: Frame, size: int) -> np.ndarray:
    """Box filter of width `size` per channel, edges replicated."""
    if size <= 1:
        return frame.copy()
    return ndimage.uniform_filter(frame, size=(size, size, 1), mode="nearest")


def rms_contrast(frame: Frame) -> float:
    """std(Y) / mean(Y) mapped to [0, 1) by c / (1 + c); black frames score 0."""
    y = luminance(frame)
    mu = float(np.mean(y))
    if mu <= 0.0:
        return 0.0
    c = float(np.std(y)) / mu
    return c / (1.0 + c)


def colorfulness(frame: Frame) -> float:
    """Mean absolute difference over channel pairs (R-G, R-B, G-B); 0 for grayscale."""
    if frame.shape[-1] == 1:
        return 0.0
    r, g, b = frame[..., 0], frame[..., 1], frame[..., 2]
    return float((np.mean(np.abs(r - g)) + np.mean(np.abs(r - b)) + np.mean(np.abs(g - b))) / 3.0)


def aesthetic_proxy(frame: Frame) -> float:
    return 0.5 * rms_contrast(frame) + 0.5 * colorfulness(frame)


def border_mask(height: int, width: int) -> np.ndarray:
    """Boolean border band of width ceil(min(H, W) / 8)."""
    band = -(-min(height, width) // 8)
    mask = np.zeros((height, width), dtype=bool)
    mask[:band, :] = True
    mask[-band:, :] = True
    mask[:, :band] = True
    mask[:, -band:] = True
    return mask


def center_box(height: int, width: int) -> Box:
    """Middle half of the frame in each direction."""
    y0, x0 = height // 4, width // 4
    return y0, max(height - y0, y0 + 1), x0, max(width - x0, x0 + 1)


def histogram_embedding(crop: Frame) -> np.ndarray:
    """Per-channel 8-bin histogram, concatenated and L2-normalised."""
    bins = np.minimum((crop * HISTOGRAM_BINS).astype(np.int64), HISTOGRAM_BINS - 1)
    hist = np.concatenate([
        np.bincount(bins[..., ch].ravel(), minlength=HISTOGRAM_BINS)
        for ch in range(crop.shape[-1])
    ]).astype(np.float64)
    norm = np.linalg.norm(hist)
    if norm == 0.0:
        raise ZeroNormError()
    return hist / norm


# =============================================================================
# Flow
# =============================================================================

def difference_magnitude(a: Frame, b: Frame) -> np.ndarray:
    """Temporal luminance difference |Y_b - Y_a|, used as a flow magnitude proxy."""
    return np.abs(luminance(b) - luminance(a))


def flow_magnitudes(seg: FrameSequence, plugins: ScorerPlugins) -> List[np.ndarray]:
    """Per-pixel flow magnitude for each consecutive frame pair."""
    if len(seg) < 2:
        raise RangeError("motion needs at least 2 frames")
    frames = seg.frames
    out = []
    for t in range(len(seg) - 1):
        if plugins.flow_estimator is not None:
            flow = plugins.flow_estimator(frames[t], frames[t + 1])
            if not isinstance(flow, FlowField):
                flow = FlowField(flow)
            if flow.u.shape[:2] != (seg.height, seg.width):
                raise DimensionError("flow_estimator", flow.u.shape, (seg.height, seg.width, 2))
            out.append(flow.magnitude())
        else:
            out.append(difference_magnitude(frames[t], frames[t + 1]))
    return out


# =============================================================================
# Segment Scores
# =============================================================================

def clarity_score(seg: FrameSequence) -> float:
    return float(np.mean([laplacian_variance(f) for f in seg.frames]))


def motion_score(seg: FrameSequence, plugins: ScorerPlugins) -> float:
    """Mean per-pixel flow magnitude, averaged over frame pairs."""
    return float(np.mean([np.mean(m) for m in flow_magnitudes(seg, plugins)]))


def motion_smoothness_score(seg: FrameSequence) -> float:
    """
    1 - mean|Y[t+1] - 2Y[t] + Y[t-1]| / 2, averaged over interior frames.

    A two-frame segment has no interior frame and scores 1.
    """
    if len(seg) < 2:
        raise RangeError("motion needs at least 2 frames")
    if len(seg) == 2:
        return 1.0
    y = np.stack([luminance(f) for f in seg.frames])
    accel = np.abs(y[2:] - 2.0 * y[1:-1] + y[:-2])
    return float(np.mean(1.0 - accel.mean(axis=(1, 2)) / 2.0))


def aesthetic_score(seg: FrameSequence, plugins: ScorerPlugins) -> float:
    score = plugins.aesthetic or aesthetic_proxy
    return float(np.mean([float(score(f)) for f in seg.frames]))


def background_score(seg: FrameSequence, plugins: ScorerPlugins, flow_tau: float) -> float:
    """Mean over frame pairs of the fraction of background pixels with flow <= flow_tau."""
    magnitudes = flow_magnitudes(seg, plugins)
    fractions = []
    for t, mag in enumerate(magnitudes):
        if plugins.background_mask is not None:
            mask = np.asarray(plugins.background_mask(seg.frames[t]), dtype=bool)
        else:
            mask = border_mask(seg.height, seg.width)
        if mask.shape != mag.shape:
            raise DimensionError("background_mask", mask.shape, mag.shape)
        if not mask.any():
            raise RangeError(f"empty background mask at frame {t}")
        fractions.append(float(np.mean(mag[mask] <= flow_tau)))
    return float(np.mean(fractions))


def subject_crop(frame: Frame, plugins: ScorerPlugins) -> np.ndarray:
    if plugins.subject_locator is not None:
        y0, y1, x0, x1 = plugins.subject_locator(frame)
    else:
        y0, y1, x0, x1 = center_box(frame.shape[0], frame.shape[1])
    crop = frame[y0:y1, x0:x1]
    if crop.size == 0:
        raise RangeError(f"empty subject crop ({y0}:{y1}, {x0}:{x1})")
    return crop


def subject_embedding(frame: Frame, plugins: ScorerPlugins) -> np.ndarray:
    encode = plugins.subject_encoder or histogram_embedding
    return np.ravel(np.asarray(encode(subject_crop(frame, plugins)), dtype=np.float64))


def reference_embedding(seg: FrameSequence, plugins: ScorerPlugins) -> np.ndarray:
    """Mean subject embedding over the frames of the reference segment."""
    return np.mean(np.stack([subject_embedding(f, plugins) for f in seg.frames]), axis=0)


def subject_score(seg: FrameSequence, plugins: ScorerPlugins, ref_embedding: np.ndarray) -> float:
    sims = [T.cosine_similarity(subject_embedding(f, plugins), ref_embedding) for f in seg.frames]
    return float(np.mean(sims))


METRICS = ("clarity", "motion", "aesthetic", "background", "subject")


def segment_scores(
    segments: Sequence[FrameSequence],
    metric: str,
    plugins: ScorerPlugins,
    flow_tau: float,
    motion_kind: str = "energy",
) -> List[float]:
    """Score series Q_1..Q_N of one metric."""
    if metric == "clarity":
        return [clarity_score(s) for s in segments]
    if metric == "motion":
        if motion_kind == "smoothness":
            return [motion_smoothness_score(s) for s in segments]
        return [motion_score(s, plugins) for s in segments]
    if metric == "aesthetic":
        return [aesthetic_score(s, plugins) for s in segments]
    if metric == "background":
        return [background_score(s, plugins, flow_tau) for s in segments]
    if metric == "subject":
        ref = reference_embedding(segments[0], plugins)
        return [subject_score(s, plugins, ref) for s in segments]
    raise RangeError(f"unknown metric {metric!r}")
