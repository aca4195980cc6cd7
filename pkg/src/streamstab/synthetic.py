"""Synthetic frame-pair sequences for tests and benchmarks.

A smoothed-noise texture translates by an integer step per frame (wrapping at
the borders, so ground-truth flow is known everywhere), and the "stylized"
stream is a fixed color remap of the input plus per-frame i.i.d. noise - the
flicker the stabilizer is supposed to remove.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imgio import as_frame


def noise_texture(height: int, width: int, rng: np.random.Generator, smoothness: float = 1.5) -> np.ndarray:
    """High-contrast smoothed-noise texture in [0, 1], three channels."""
    channels = []
    for _ in range(3):
        base = rng.random((height, width)).astype(np.float32)
        smooth = ndimage.gaussian_filter(base, smoothness)
        lo, hi = float(smooth.min()), float(smooth.max())
        channels.append((smooth - lo) / (hi - lo))
    return np.stack(channels, axis=2).astype(np.float32)


def stylize(frame: np.ndarray) -> np.ndarray:
    """Deterministic stylization stand-in: gamma curve plus channel mixing."""
    shaped = np.power(np.clip(frame, 0.0, 1.0), 0.7)
    mix = np.array(
        [[0.7, 0.2, 0.1], [0.1, 0.7, 0.2], [0.2, 0.1, 0.7]], dtype=np.float32
    )
    mixed = shaped @ mix.T
    return np.clip(0.1 + 0.8 * mixed, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class SyntheticSequence:
    """Aligned input/processed frame lists plus the per-step content motion."""

    inputs: list[np.ndarray]
    processed: list[np.ndarray]
    step_u: int
    step_v: int


def translating_sequence(
    frames: int,
    height: int = 96,
    width: int = 128,
    step: tuple[int, int] = (2, 1),
    noise_sigma: float = 0.05,
    seed: int = 0,
) -> SyntheticSequence:
    """Build a wrapping translating-texture sequence with flickering stylization.

    ``step`` is the (u, v) content motion per frame in pixels; the processed
    stream gets fresh Gaussian noise of ``noise_sigma`` every frame.
    """
    rng = np.random.default_rng(seed)
    base = noise_texture(height, width, rng)
    step_u, step_v = step
    inputs = []
    processed = []
    for t in range(frames):
        frame = np.roll(base, shift=(t * step_v, t * step_u), axis=(0, 1))
        styled = stylize(frame)
        if noise_sigma > 0.0:
            styled = styled + rng.normal(0.0, noise_sigma, styled.shape).astype(np.float32)
        inputs.append(as_frame(frame))
        processed.append(as_frame(styled))
    return SyntheticSequence(inputs=inputs, processed=processed, step_u=step_u, step_v=step_v)
