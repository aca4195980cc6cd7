"""Evaluation metrics: SSIM against the per-frame processed stream and
temporal warping error between consecutive frames.

Absolute warping-error numbers depend on the flow backend used to align
frames, so only orderings and ratios between runs of the same backend are
meaningful.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .flow import FlowProvider, ResolutionMismatch, backward_warp, luma, occlusion_mask

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class MetricReport:
    """Per-frame metric values and their mean."""

    name: str
    per_frame: list[tuple[int, float]]
    skipped: list[int] = field(default_factory=list)
    preset: str | None = None
    flow_backend: str | None = None

    @property
    def mean(self) -> float:
        if not self.per_frame:
            return math.nan
        return float(np.mean([v for _, v in self.per_frame]))

    @property
    def count(self) -> int:
        return len(self.per_frame)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame_index", "value"])
            for index, value in self.per_frame:
                writer.writerow([index, f"{value:.8f}"])

    def summary(self) -> dict:
        return {
            "metric": self.name,
            "mean": self.mean,
            "count": self.count,
            "skipped": self.skipped,
            "preset": self.preset,
            "flow_backend": self.flow_backend,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM on luma: 11x11 Gaussian window, sigma 1.5, [0,1] range.

    Local statistics are computed everywhere with reflected borders, then the
    half-window margin is cropped before averaging, matching the classic
    valid-window formulation.
    """
    if a.shape[:2] != b.shape[:2]:
        raise ResolutionMismatch(f"{a.shape[:2]} vs {b.shape[:2]}")
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = luma(a).astype(np.float64)
    y = luma(b).astype(np.float64)
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    def blur(img: np.ndarray) -> np.ndarray:
        tmp = ndimage.correlate1d(img, window, axis=0, mode="reflect")
        return ndimage.correlate1d(tmp, window, axis=1, mode="reflect")

    mu_x = blur(x)
    mu_y = blur(y)
    sigma_x = blur(x * x) - mu_x * mu_x
    sigma_y = blur(y * y) - mu_y * mu_y
    sigma_xy = blur(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)) / (
        (mu_x**2 + mu_y**2 + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    )
    pad = SSIM_WINDOW // 2
    return float(ssim_map[pad : h - pad, pad : w - pad].mean())


def warping_error_pair(
    frame_a: np.ndarray,
    frame_b: np.ndarray,
    pos_a: int,
    pos_b: int,
    flow_backend: FlowProvider,
) -> float | None:
    """Occlusion-masked mean L1 between frame a and warped frame b.

    Returns None when every pixel is masked out.
    """
    forward = flow_backend.flow_between(pos_a, frame_a, pos_b, frame_b)
    backward = flow_backend.flow_between(pos_b, frame_b, pos_a, frame_a)
    mask = occlusion_mask(forward, backward)
    warped, warp_mask = backward_warp(frame_b, forward)
    mask = mask * warp_mask
    total = mask.sum(dtype=np.float64)
    if total == 0.0:
        return None
    diff = np.abs(frame_a.astype(np.float32) - warped)
    per_pixel = diff.mean(axis=2) if diff.ndim == 3 else diff
    return float((mask * per_pixel).sum(dtype=np.float64) / total)


def warping_error(frames, flow_backend: FlowProvider) -> MetricReport:
    """Temporal warping error over consecutive frames of a sequence.

    ``frames`` is any iterable of frames in stream order; per-pair values are
    indexed by the earlier frame's 1-based position and averaged.
    """
    report = MetricReport(name="ewarp", per_frame=[], flow_backend=getattr(flow_backend, "backend_id", None))
    prev = None
    pos = 0
    for frame in frames:
        pos += 1
        if prev is not None:
            value = warping_error_pair(prev, frame, pos - 1, pos, flow_backend)
            if value is None:
                report.skipped.append(pos - 1)
            else:
                report.per_frame.append((pos - 1, value))
        prev = frame
    if pos < 2:
        raise ValueError("warping error needs at least 2 frames")
    return report


def ssim_report(candidate_frames, reference_frames) -> MetricReport:
    """Per-frame SSIM between two aligned sequences, plus the mean."""
    report = MetricReport(name="ssim", per_frame=[])
    pos = 0
    for cand, ref in zip(candidate_frames, reference_frames, strict=True):
        pos += 1
        report.per_frame.append((pos, ssim(cand, ref)))
    if pos == 0:
        raise ValueError("empty sequences")
    return report
