"""Adaptive local/global temporal consistency and its screened-Poisson solver.

Per frame t the pipeline is: warp the neighboring input and processed frames
into t's coordinates, derive warp-accuracy weights from the input residuals,
blend a locally consistent image from processed neighbors, combine it with
the warped previous output into an adaptive target, derive a per-pixel
smoothness weight from the warped-input residual, and minimize

    E(O) = ||grad O - grad P||^2 + w_c ||O - A||^2

by gradient descent with momentum.  Gradients are forward differences with
replicate boundaries, so the Euler-Lagrange operator is the 5-point Neumann
Laplacian and the descent direction is -(lap O - lap P) + w_c (O - A); the
analytic factor 2 is folded into the step size.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from typing import Mapping

import numpy as np

from .flow import FlowProvider, ResolutionMismatch, backward_warp
from .imgio import FlowField


class SolverDivergence(Exception):
    """Non-finite iterate appeared during the solve."""

    def __init__(self, iteration: int):
        super().__init__(f"solver diverged at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class ConsistencyParams:
    """The full user-tunable consistency state.

    ``lam`` is serialized as ``lambda`` everywhere outside Python.
    """

    k1: float = 0.3
    k2: float = 0.5
    alpha: float = 6.5e3
    lam: float = 2.0
    eta: float = 0.15
    kappa: float = 0.2
    iterations: int = 150
    flow_downscale: int = 1

    def validate(self) -> None:
        if not (0.0 <= self.k1 < 1.0 and 0.0 <= self.k2 < 1.0):
            raise ValueError("k1 and k2 must lie in [0, 1)")
        if self.k1 + self.k2 <= 0.0:
            raise ValueError("k1+k2 must be > 0")
        if self.k1 + self.k2 >= 1.0:
            raise ValueError("k1+k2 must be < 1")
        if self.lam < 0.0:
            raise ValueError("lambda must be >= 0")
        if self.eta <= 0.0:
            raise ValueError("eta must be > 0")
        if not (0.0 <= self.kappa < 1.0):
            raise ValueError("kappa must be in [0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.flow_downscale not in (1, 2, 4):
            raise ValueError("flow_downscale must be 1, 2 or 4")

    def replace(self, **changes) -> "ConsistencyParams":
        updated = replace(self, **changes)
        updated.validate()
        return updated

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, payload: Mapping, base: "ConsistencyParams | None" = None) -> "ConsistencyParams":
        allowed = {f.name for f in fields(cls)}
        changes = {}
        for key, value in payload.items():
            name = "lam" if key == "lambda" else key
            if name not in allowed:
                raise ValueError(f"unknown parameter {key!r}")
            if name in ("iterations", "flow_downscale"):
                changes[name] = int(value)
            else:
                changes[name] = float(value)
        params = replace(base if base is not None else cls(), **changes)
        params.validate()
        return params


PRESETS: dict[str, ConsistencyParams] = {
    "default": ConsistencyParams(),
    "objective": ConsistencyParams(k1=0.3, k2=0.3, alpha=1.0e4, lam=0.7),
    "fast": ConsistencyParams(flow_downscale=2, iterations=50),
}


def preset(name: str) -> ConsistencyParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) != 1:
        raise ResolutionMismatch(f"resolution mismatch: {sorted(shapes)}")


def _check_same_images(*images: np.ndarray) -> None:
    """Full-shape equality for arguments on the same (input or processed) side."""
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ResolutionMismatch(f"image shapes differ: {sorted(shapes)}")


def _sq_color_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel squared color distance, summed over channels."""
    d = a.astype(np.float32) - b.astype(np.float32)
    if d.ndim == 3:
        return (d * d).sum(axis=2)
    return d * d


def warp_weight(
    reference: np.ndarray,
    warped: np.ndarray,
    alpha: float,
    bound: float,
    validity: np.ndarray | None = None,
) -> np.ndarray:
    """Warp-accuracy weight min(bound, exp(-alpha * ||reference - warped||^2)).

    Zero where ``validity`` is 0, so out-of-frame samples contribute nothing.
    """
    _check_same_images(reference, warped)
    if not (0.0 <= bound < 1.0):
        raise ValueError("bound must lie in [0, 1)")
    w = np.minimum(
        np.float32(bound),
        np.exp(-np.float32(alpha) * _sq_color_distance(reference, warped)),
    ).astype(np.float32)
    if validity is not None:
        _check_same_shape(reference, validity)
        w = w * (np.asarray(validity, dtype=np.float32) > 0.0)
    return w


def local_blend(
    current: np.ndarray,
    warped_prev: np.ndarray,
    warped_next: np.ndarray,
    w_p: np.ndarray,
    w_n: np.ndarray,
) -> np.ndarray:
    """Convex blend of the current frame with its warped temporal neighbors."""
    _check_same_images(current, warped_prev, warped_next)
    _check_same_shape(current, w_p, w_n)
    wp = w_p[:, :, None] if current.ndim == 3 else w_p
    wn = w_n[:, :, None] if current.ndim == 3 else w_n
    return ((1.0 - (wp + wn)) * current + wp * warped_prev + wn * warped_next).astype(
        np.float32
    )


def input_blend(
    current_input: np.ndarray,
    warped_input_prev: np.ndarray,
    warped_input_next: np.ndarray,
    w_p: np.ndarray,
    w_n: np.ndarray,
) -> np.ndarray:
    """Same blend as local_blend, applied to the input frames."""
    return local_blend(current_input, warped_input_prev, warped_input_next, w_p, w_n)


def global_warp(prev_output: np.ndarray, flow_to_prev: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Warp the previous stabilized output into the current frame."""
    return backward_warp(prev_output, flow_to_prev)


def adaptive_blend(global_image: np.ndarray, local_image: np.ndarray, w_p: np.ndarray) -> np.ndarray:
    """Blend globally and locally consistent images: w_p G + (1 - w_p) L."""
    _check_same_images(global_image, local_image)
    _check_same_shape(global_image, w_p)
    wp = w_p[:, :, None] if global_image.ndim == 3 else w_p
    return (wp * global_image + (1.0 - wp) * local_image).astype(np.float32)


def consistency_weight(
    current_input: np.ndarray, blended_input: np.ndarray, alpha: float, lam: float
) -> np.ndarray:
    """Smoothness weight lam * exp(-alpha * ||I - blended I||^2)."""
    _check_same_images(current_input, blended_input)
    if lam < 0.0:
        raise ValueError("lambda must be >= 0")
    return (
        np.float32(lam)
        * np.exp(-np.float32(alpha) * _sq_color_distance(current_input, blended_input))
    ).astype(np.float32)


def _laplacian_into(image: np.ndarray, out: np.ndarray) -> np.ndarray:
    np.multiply(image, np.float32(-4.0), out=out)
    out[1:] += image[:-1]
    out[0] += image[0]
    out[:-1] += image[1:]
    out[-1] += image[-1]
    out[:, 1:] += image[:, :-1]
    out[:, 0] += image[:, 0]
    out[:, :-1] += image[:, 1:]
    out[:, -1] += image[:, -1]
    return out


def laplacian(image: np.ndarray) -> np.ndarray:
    """5-point Laplacian with replicate (Neumann) boundaries."""
    image = np.asarray(image, dtype=np.float32)
    return _laplacian_into(image, np.empty_like(image))


def energy_gradient(
    iterate: np.ndarray, processed: np.ndarray, target: np.ndarray, w_c: np.ndarray
) -> np.ndarray:
    """Descent direction -(lap O - lap P) + w_c (O - A)."""
    wc = w_c[:, :, None] if iterate.ndim == 3 else w_c
    return -(laplacian(iterate) - laplacian(processed)) + wc * (iterate - target)


def screened_poisson_energy(
    candidate: np.ndarray, processed: np.ndarray, target: np.ndarray, w_c: np.ndarray
) -> float:
    """Discrete energy: forward-difference gradient residual plus screening term."""
    dx = candidate[:, 1:] - candidate[:, :-1] - (processed[:, 1:] - processed[:, :-1])
    dy = candidate[1:, :] - candidate[:-1, :] - (processed[1:, :] - processed[:-1, :])
    wc = w_c[:, :, None] if candidate.ndim == 3 else w_c
    screen = wc * (candidate - target) ** 2
    return float(
        (dx.astype(np.float64) ** 2).sum()
        + (dy.astype(np.float64) ** 2).sum()
        + screen.astype(np.float64).sum()
    )


def solve_screened_poisson(
    processed: np.ndarray,
    target: np.ndarray,
    w_c: np.ndarray,
    params: ConsistencyParams,
    init: np.ndarray,
) -> np.ndarray:
    """Minimize the screened-Poisson energy by SGD with momentum.

    Runs exactly ``params.iterations`` updates from ``init`` (which also seeds
    the momentum history) and clamps to [0, 1] only at the very end.
    """
    _check_same_images(processed, target, init)
    _check_same_shape(processed, w_c)
    wc = w_c[:, :, None] if processed.ndim == 3 else w_c
    target = np.asarray(target, dtype=np.float32)
    lap_p = laplacian(processed)
    eta = np.float32(params.eta)
    kappa = np.float32(params.kappa)
    current = np.array(init, dtype=np.float32, copy=True)
    previous = current.copy()
    # iteration buffers reused across the loop; the update keeps the exact
    # O - eta*g + kappa*(O - O_prev) arithmetic so a zero gradient leaves the
    # iterate bitwise unchanged
    grad = np.empty_like(current)
    diff = np.empty_like(current)
    momentum = np.empty_like(current)
    updated = np.empty_like(current)
    for j in range(params.iterations):
        _laplacian_into(current, grad)
        np.subtract(grad, lap_p, out=grad)
        np.subtract(current, target, out=diff)
        np.multiply(diff, wc, out=diff)
        np.subtract(diff, grad, out=grad)
        np.multiply(grad, eta, out=grad)
        np.subtract(current, previous, out=momentum)
        np.multiply(momentum, kappa, out=momentum)
        np.subtract(current, grad, out=updated)
        np.add(updated, momentum, out=updated)
        if not np.isfinite(np.sum(updated)):
            raise SolverDivergence(j + 1)
        previous, current, updated = current, updated, previous
    return np.clip(current, 0.0, 1.0)


@dataclass
class StepTiming:
    """Wall-clock milliseconds spent per pipeline stage for one frame."""

    flow_ms: float = 0.0
    solve_ms: float = 0.0


@dataclass
class SessionState:
    """One-frame-latency stream state: a (t-1, t, t+1) snippet plus O_{t-1}.

    Push (input, processed) pairs in stream order; once three consecutive
    pairs are buffered, ``stabilize_step`` solves the middle one.  The first
    output is pinned to the first processed frame.
    """

    params: ConsistencyParams
    pairs: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)
    prev_output: np.ndarray | None = None
    solved_through: int = 0
    last_timing: StepTiming = field(default_factory=StepTiming)

    def push_pair(self, position: int, input_frame: np.ndarray, processed_frame: np.ndarray) -> None:
        # channel counts may differ (gray input, color stylization): the
        # weight maps are 2-D and broadcast over whichever side they scale
        if input_frame.shape[:2] != processed_frame.shape[:2]:
            raise ResolutionMismatch("input and processed frames differ in resolution")
        if self.pairs:
            if position != self.pairs[-1][0] + 1:
                raise ValueError(
                    f"non-consecutive frame position {position} after {self.pairs[-1][0]}"
                )
            if input_frame.shape != self.pairs[-1][1].shape:
                raise ResolutionMismatch("resolution drift mid-stream")
            if processed_frame.shape != self.pairs[-1][2].shape:
                raise ResolutionMismatch("resolution drift mid-stream")
        self.pairs.append((position, input_frame, processed_frame))
        if len(self.pairs) > 3:
            self.pairs.pop(0)
        if self.prev_output is None:
            self.prev_output = processed_frame
            self.solved_through = position

    def _snippet(self, want_next: bool):
        if self.prev_output is None:
            raise ValueError("no buffered frames")
        t = self.solved_through + 1
        by_pos = {p: (i, pr) for p, i, pr in self.pairs}
        if t - 1 not in by_pos or t not in by_pos:
            raise ValueError(f"missing buffered frames around position {t}")
        if want_next and t + 1 not in by_pos:
            raise ValueError(f"missing next frame {t + 1}; use stream_end_step at stream end")
        if not want_next and t + 1 in by_pos:
            raise ValueError("next frame is available; use stabilize_step")
        return t, by_pos


def stabilize_step(state: SessionState, flow_backend: FlowProvider) -> np.ndarray:
    """Solve the next pending frame using both temporal neighbors."""
    t, by_pos = state._snippet(want_next=True)
    return _run_step(state, flow_backend, t, by_pos, with_next=True)


def stream_end_step(state: SessionState, flow_backend: FlowProvider) -> np.ndarray:
    """Solve the final frame: the next-frame terms drop out of the blends."""
    t, by_pos = state._snippet(want_next=False)
    return _run_step(state, flow_backend, t, by_pos, with_next=False)


def _run_step(
    state: SessionState,
    flow_backend: FlowProvider,
    t: int,
    by_pos: dict,
    with_next: bool,
) -> np.ndarray:
    params = state.params
    input_prev, processed_prev = by_pos[t - 1]
    input_cur, processed_cur = by_pos[t]

    t0 = time.perf_counter()
    flow_to_prev = flow_backend.flow_between(t, input_cur, t - 1, input_prev)
    flow_to_next = None
    if with_next:
        input_next, processed_next = by_pos[t + 1]
        flow_to_next = flow_backend.flow_between(t, input_cur, t + 1, input_next)
    flow_ms = (time.perf_counter() - t0) * 1e3

    warped_input_prev, mask_prev = backward_warp(input_prev, flow_to_prev)
    warped_proc_prev, _ = backward_warp(processed_prev, flow_to_prev)
    w_p = warp_weight(input_cur, warped_input_prev, params.alpha, params.k1, mask_prev)

    if with_next:
        warped_input_next, mask_next = backward_warp(input_next, flow_to_next)
        warped_proc_next, _ = backward_warp(processed_next, flow_to_next)
        w_n = warp_weight(input_cur, warped_input_next, params.alpha, params.k2, mask_next)
    else:
        warped_input_next = input_cur
        warped_proc_next = processed_cur
        w_n = np.zeros(input_cur.shape[:2], dtype=np.float32)

    locally_consistent = local_blend(processed_cur, warped_proc_prev, warped_proc_next, w_p, w_n)
    globally_consistent, _ = global_warp(state.prev_output, flow_to_prev)
    target = adaptive_blend(globally_consistent, locally_consistent, w_p)
    blended_input = input_blend(input_cur, warped_input_prev, warped_input_next, w_p, w_n)
    w_c = consistency_weight(input_cur, blended_input, params.alpha, params.lam)

    t1 = time.perf_counter()
    output = solve_screened_poisson(processed_cur, target, w_c, params, init=target)
    solve_ms = (time.perf_counter() - t1) * 1e3

    state.prev_output = output
    state.solved_through = t
    state.last_timing = StepTiming(flow_ms=flow_ms, solve_ms=solve_ms)
    return output


def stabilize_stream(pairs, params: ConsistencyParams, flow_backend: FlowProvider):
    """Drive a whole stream of (input, processed) pairs through a session.

    Yields (position, stabilized frame) in order with one-frame latency:
    position t is solved once pair t+1 has been consumed, and the final frame
    goes through the degenerate end-of-stream step.
    """
    state = SessionState(params=params)
    position = 0
    for input_frame, processed_frame in pairs:
        position += 1
        state.push_pair(position, input_frame, processed_frame)
        if position == 1:
            yield 1, state.prev_output
        elif position >= 3:
            yield position - 1, stabilize_step(state, flow_backend)
    if position >= 2:
        yield position, stream_end_step(state, flow_backend)
