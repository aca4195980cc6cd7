"""Optical flow estimation, backward warping, occlusion masking, flow metrics.

The built-in estimator is a coarse-to-fine inverse-search patch matcher:
per-patch Gauss-Newton translation estimates on a stride grid, densified by
bilinear interpolation and smoothed once per pyramid level.  Everything is
vectorized over patches, so a level is a handful of array passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from .imgio import FlowField, read_flo, write_flo

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


class ResolutionMismatch(Exception):
    """Inputs that must share a resolution do not."""


@dataclass(frozen=True)
class FlowOptions:
    """Tuning knobs for the built-in estimator."""

    levels: int = 5
    patch_size: int = 9
    iterations_per_level: int = 4
    downscale: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")
        if self.downscale not in (1, 2, 4):
            raise ValueError("downscale must be 1, 2 or 4")


def luma(frame: np.ndarray) -> np.ndarray:
    """Collapse a frame to a single luma channel (0.299R + 0.587G + 0.114B)."""
    if frame.ndim == 2:
        return np.asarray(frame, dtype=np.float32)
    if frame.shape[2] == 1:
        return np.asarray(frame[:, :, 0], dtype=np.float32)
    return frame.astype(np.float32) @ LUMA_WEIGHTS


def resize_bilinear(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Resize (H, W) or (H, W, C) to ``shape`` by bilinear sampling at pixel centers."""
    in_h, in_w = arr.shape[:2]
    out_h, out_w = shape
    if (in_h, in_w) == (out_h, out_w):
        return arr.astype(np.float32, copy=True)
    ys = (np.arange(out_h, dtype=np.float32) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float32) + 0.5) * (in_w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    squeeze = arr.ndim == 2
    planes = arr[:, :, None] if squeeze else arr
    out = _bilinear_gather(planes.astype(np.float32), yy, xx)
    return out[:, :, 0] if squeeze else out


def box_downscale(arr: np.ndarray, factor: int) -> np.ndarray:
    """Downscale by integer factor with box averaging, cropping the remainder."""
    if factor == 1:
        return np.asarray(arr, dtype=np.float32)
    h, w = arr.shape[:2]
    h2, w2 = (h // factor) * factor, (w // factor) * factor
    cropped = arr[:h2, :w2]
    if cropped.ndim == 2:
        view = cropped.reshape(h2 // factor, factor, w2 // factor, factor)
        return view.mean(axis=(1, 3), dtype=np.float32)
    view = cropped.reshape(h2 // factor, factor, w2 // factor, factor, cropped.shape[2])
    return view.mean(axis=(1, 3), dtype=np.float32)


def _bilinear_gather(planes: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) planes at float coords, clamped to the border.

    ``ys``/``xs`` may have any common shape; output is that shape + (C,).
    """
    h, w = planes.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(np.float32)[..., None]
    fx = (xs - x0).astype(np.float32)[..., None]
    top = planes[y0, x0] * (1.0 - fx) + planes[y0, x1] * fx
    bottom = planes[y1, x0] * (1.0 - fx) + planes[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def backward_warp(image: np.ndarray, flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``image`` at (x + flow(x)) with bilinear interpolation.

    Returns the warped image and a float mask that is 1 where the sample
    footprint lies fully inside the image and the flow is valid.  Out-of-range
    samples are clamped to the border, so the warped image is always finite.
    """
    image = np.asarray(image, dtype=np.float32)
    squeeze = image.ndim == 2
    planes = image[:, :, None] if squeeze else image
    h, w = planes.shape[:2]
    if (flow.height, flow.width) != (h, w):
        raise ResolutionMismatch(
            f"flow {flow.width}x{flow.height} vs image {w}x{h}"
        )
    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float32), np.arange(w, dtype=np.float32), indexing="ij"
    )
    ys = yy + flow.uv[:, :, 1]
    xs = xx + flow.uv[:, :, 0]
    inside = (ys >= 0.0) & (ys <= h - 1.0) & (xs >= 0.0) & (xs <= w - 1.0)
    mask = (inside & flow.valid).astype(np.float32)
    warped = _bilinear_gather(planes, ys, xs)
    if squeeze:
        warped = warped[:, :, 0]
    return warped, mask


def occlusion_mask(forward: FlowField, backward: FlowField) -> np.ndarray:
    """Forward-backward consistency mask: 1 at non-occluded pixels.

    A pixel passes when |w + w_back(x + w)|^2 < 0.01 (|w|^2 + |w_back|^2) + 0.5
    and the lookup stays inside the image.
    """
    if (forward.height, forward.width) != (backward.height, backward.width):
        raise ResolutionMismatch("flow fields differ in resolution")
    h, w = forward.height, forward.width
    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float32), np.arange(w, dtype=np.float32), indexing="ij"
    )
    ys = yy + forward.uv[:, :, 1]
    xs = xx + forward.uv[:, :, 0]
    inside = (ys >= 0.0) & (ys <= h - 1.0) & (xs >= 0.0) & (xs <= w - 1.0)
    back = _bilinear_gather(backward.uv, ys, xs)
    back_valid = backward.valid[
        np.clip(np.rint(ys), 0, h - 1).astype(np.intp),
        np.clip(np.rint(xs), 0, w - 1).astype(np.intp),
    ]
    lhs = ((forward.uv + back) ** 2).sum(axis=2)
    rhs = 0.01 * ((forward.uv**2).sum(axis=2) + (back**2).sum(axis=2)) + 0.5
    ok = (lhs < rhs) & inside & forward.valid & back_valid
    return ok.astype(np.float32)


def endpoint_error(pred: FlowField, gt: FlowField) -> float:
    """Mean Euclidean distance in pixels over jointly valid pixels."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise ResolutionMismatch("flow fields differ in resolution")
    valid = pred.valid & gt.valid
    if not valid.any():
        raise ValueError("no valid pixels for endpoint error")
    diff = pred.uv - gt.uv
    err = np.sqrt((diff**2).sum(axis=2))
    return float(err[valid].mean())


def estimate_flow(
    from_frame: np.ndarray, to_frame: np.ndarray, opts: FlowOptions = FlowOptions()
) -> FlowField:
    """Estimate dense flow mapping pixels of ``from_frame`` toward ``to_frame``.

    The result is suitable for backward-warping ``to_frame`` into
    ``from_frame``'s frame of reference.
    """
    if from_frame.shape[:2] != to_frame.shape[:2]:
        raise ResolutionMismatch(
            f"frames differ: {from_frame.shape[:2]} vs {to_frame.shape[:2]}"
        )
    h, w = from_frame.shape[:2]
    g1 = luma(from_frame)
    g2 = luma(to_frame)
    if opts.downscale > 1:
        g1s = box_downscale(g1, opts.downscale)
        g2s = box_downscale(g2, opts.downscale)
        small = _estimate_pyramid(g1s, g2s, opts)
        uv = resize_bilinear(small, (h, w)) * float(opts.downscale)
        return FlowField(uv.astype(np.float32))
    return FlowField(_estimate_pyramid(g1, g2, opts))


def _estimate_pyramid(g1: np.ndarray, g2: np.ndarray, opts: FlowOptions) -> np.ndarray:
    h, w = g1.shape
    patch = opts.patch_size
    if min(h, w) < patch:
        raise ValueError(f"resolution {w}x{h} smaller than patch size {patch}")
    pyr1 = [g1]
    pyr2 = [g2]
    while len(pyr1) < opts.levels and min(pyr1[-1].shape) >= 2 * patch:
        pyr1.append(box_downscale(pyr1[-1], 2))
        pyr2.append(box_downscale(pyr2[-1], 2))
    uv = np.zeros((*pyr1[-1].shape, 2), dtype=np.float32)
    coarsest = True
    for a, b in zip(reversed(pyr1), reversed(pyr2)):
        # Matching runs on slightly smoothed copies; box downscaling alone
        # leaves the coarse levels aliased enough to derail Gauss-Newton.
        a = ndimage.gaussian_filter(a, 1.0)
        b = ndimage.gaussian_filter(b, 1.0)
        if uv.shape[:2] != a.shape:
            scale_y = a.shape[0] / uv.shape[0]
            uv = resize_bilinear(uv, a.shape) * np.float32(scale_y)
        uv = _refine_level(a, b, uv, patch, opts.iterations_per_level, exhaustive=coarsest)
        coarsest = False
    return uv


def _refine_level(
    g1: np.ndarray,
    g2: np.ndarray,
    uv: np.ndarray,
    patch: int,
    iters: int,
    exhaustive: bool = False,
) -> np.ndarray:
    h, w = g1.shape
    r = patch // 2
    stride = max(1, patch // 2)
    cy = _center_positions(h, r, stride)
    cx = _center_positions(w, r, stride)
    cyy, cxx = np.meshgrid(cy, cx, indexing="ij")

    offs = np.arange(-r, r + 1, dtype=np.intp)
    py = cyy[:, :, None, None] + offs[None, None, :, None]
    px = cxx[:, :, None, None] + offs[None, None, None, :]
    template = g1[py, px]

    gx1, gy1 = _central_gradients(g1)
    tgx = gx1[py, px]
    tgy = gy1[py, px]
    h00 = (tgx * tgx).sum(axis=(2, 3)) + 1e-4
    h01 = (tgx * tgy).sum(axis=(2, 3))
    h11 = (tgy * tgy).sum(axis=(2, 3)) + 1e-4
    det = h00 * h11 - h01 * h01
    inv00 = h11 / det
    inv01 = -h01 / det
    inv11 = h00 / det

    u = uv[cyy, cxx, 0].copy()
    v = uv[cyy, cxx, 1].copy()
    fy = py.astype(np.float32)
    fx = px.astype(np.float32)
    g2p = g2[:, :, None]

    def patch_ssd(uu: np.ndarray, vv: np.ndarray) -> np.ndarray:
        sampled = _bilinear_gather(g2p, fy + vv[:, :, None, None], fx + uu[:, :, None, None])
        return ((sampled[:, :, :, :, 0] - template) ** 2).sum(axis=(2, 3))

    if exhaustive:
        # The Gauss-Newton basin is about one pixel; seed the coarsest level
        # with the best integer offset in a small window so larger motions
        # survive the pyramid.
        best = patch_ssd(u, v)
        best_u = u.copy()
        best_v = v.copy()
        for dv in range(-3, 4):
            for du in range(-3, 4):
                if du == 0 and dv == 0:
                    continue
                ssd = patch_ssd(u + du, v + dv)
                better = ssd < best
                best = np.where(better, ssd, best)
                best_u = np.where(better, u + du, best_u)
                best_v = np.where(better, v + dv, best_v)
        u, v = best_u, best_v

    init_u, init_v = u.copy(), v.copy()
    init_ssd = patch_ssd(u, v)
    for _ in range(iters):
        sampled = _bilinear_gather(g2p, fy + v[:, :, None, None], fx + u[:, :, None, None])
        resid = sampled[:, :, :, :, 0] - template
        b0 = (tgx * resid).sum(axis=(2, 3))
        b1 = (tgy * resid).sum(axis=(2, 3))
        u -= inv00 * b0 + inv01 * b1
        v -= inv01 * b0 + inv11 * b1
    worse = patch_ssd(u, v) > init_ssd
    u = np.where(worse, init_u, u)
    v = np.where(worse, init_v, v)

    u = ndimage.median_filter(u, size=3, mode="nearest")
    v = ndimage.median_filter(v, size=3, mode="nearest")
    dense_u = _interp_from_grid(u, cy, cx, h, w)
    dense_v = _interp_from_grid(v, cy, cx, h, w)
    dense_u = ndimage.uniform_filter(dense_u, size=3, mode="nearest")
    dense_v = ndimage.uniform_filter(dense_v, size=3, mode="nearest")
    return np.stack([dense_u, dense_v], axis=2)


def _center_positions(extent: int, radius: int, stride: int) -> np.ndarray:
    last = extent - 1 - radius
    pos = list(range(radius, last + 1, stride))
    if pos[-1] != last:
        pos.append(last)
    return np.asarray(pos, dtype=np.intp)


def _central_gradients(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.empty_like(g)
    gx[:, 1:-1] = 0.5 * (g[:, 2:] - g[:, :-2])
    gx[:, 0] = g[:, 1] - g[:, 0]
    gx[:, -1] = g[:, -1] - g[:, -2]
    gy = np.empty_like(g)
    gy[1:-1, :] = 0.5 * (g[2:, :] - g[:-2, :])
    gy[0, :] = g[1, :] - g[0, :]
    gy[-1, :] = g[-1, :] - g[-2, :]
    return gx, gy


def _interp_from_grid(
    values: np.ndarray, cy: np.ndarray, cx: np.ndarray, h: int, w: int
) -> np.ndarray:
    """Bilinearly spread per-patch values from center positions to a dense map."""
    ys = np.interp(np.arange(h, dtype=np.float64), cy.astype(np.float64), np.arange(len(cy), dtype=np.float64))
    xs = np.interp(np.arange(w, dtype=np.float64), cx.astype(np.float64), np.arange(len(cx), dtype=np.float64))
    yy, xx = np.meshgrid(ys.astype(np.float32), xs.astype(np.float32), indexing="ij")
    return _bilinear_gather(values[:, :, None].astype(np.float32), yy, xx)[:, :, 0]


def flow_to_color(field: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Color-code a flow field: hue = direction, saturation = magnitude."""
    u = field.uv[:, :, 0]
    v = field.uv[:, :, 1]
    mag = np.sqrt(u * u + v * v)
    if max_magnitude is None:
        max_magnitude = max(float(mag.max()), 1e-6)
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    hue = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0
    h6 = hue * 6.0
    i = np.floor(h6).astype(np.intp) % 6
    f = (h6 - np.floor(h6)).astype(np.float32)
    p = 1.0 - sat
    q = 1.0 - sat * f
    t = 1.0 - sat * (1.0 - f)
    ones = np.ones_like(sat)
    lut_r = np.stack([ones, q, p, p, t, ones], axis=0)
    lut_g = np.stack([t, ones, ones, q, p, p], axis=0)
    lut_b = np.stack([p, p, t, ones, ones, q], axis=0)
    yy, xx = np.indices(sat.shape)
    rgb = np.stack([lut_r[i, yy, xx], lut_g[i, yy, xx], lut_b[i, yy, xx]], axis=2)
    rgb[~field.valid] = 0.0
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


class FlowProvider(Protocol):
    """Supplies flow from frame at stream position ``pos_a`` to ``pos_b``."""

    def flow_between(
        self, pos_a: int, frame_a: np.ndarray, pos_b: int, frame_b: np.ndarray
    ) -> FlowField: ...


class BuiltinFlow:
    """Estimates flow on demand with the built-in matcher."""

    def __init__(self, opts: FlowOptions = FlowOptions()):
        self.opts = opts
        self.backend_id = f"builtin(levels={opts.levels},patch={opts.patch_size},downscale={opts.downscale})"

    def flow_between(self, pos_a, frame_a, pos_b, frame_b) -> FlowField:
        return estimate_flow(frame_a, frame_b, self.opts)


class FloDirFlow:
    """Reads precomputed flows named flow_<a>_to_<b>.flo from a directory."""

    TEMPLATE = "flow_%05d_to_%05d.flo"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.backend_id = f"flo-dir({self.directory})"

    def path_for(self, pos_a: int, pos_b: int) -> Path:
        return self.directory / (self.TEMPLATE % (pos_a, pos_b))

    def flow_between(self, pos_a, frame_a, pos_b, frame_b) -> FlowField:
        return read_flo(self.path_for(pos_a, pos_b))


class CachingFlow:
    """Read-through .flo cache around another provider."""

    def __init__(self, inner, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.backend_id = f"cached({inner.backend_id})"

    def flow_between(self, pos_a, frame_a, pos_b, frame_b) -> FlowField:
        path = self.cache_dir / (FloDirFlow.TEMPLATE % (pos_a, pos_b))
        if path.exists():
            return read_flo(path)
        field = self.inner.flow_between(pos_a, frame_a, pos_b, frame_b)
        write_flo(field, path)
        return field


class ConstantFlow:
    """Uniform ground-truth flow for synthetic translations.

    ``(u, v)`` is the per-step motion of the scene content between
    consecutive frames; the field returned for positions (a, b) is
    (b - a) * (u, v), which backward-warps frame b onto frame a exactly.
    """

    def __init__(self, u: float, v: float):
        self.u = float(u)
        self.v = float(v)
        self.backend_id = f"constant({self.u},{self.v})"

    def flow_between(self, pos_a, frame_a, pos_b, frame_b) -> FlowField:
        h, w = frame_a.shape[:2]
        steps = pos_b - pos_a
        uv = np.empty((h, w, 2), dtype=np.float32)
        uv[:, :, 0] = self.u * steps
        uv[:, :, 1] = self.v * steps
        return FlowField(uv)
