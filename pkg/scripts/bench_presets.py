#!/usr/bin/env python3
"""Time one stabilization step per preset at a chosen resolution."""

import argparse
import time

from streamstab.consistency import PRESETS, SessionState, preset, stabilize_step
from streamstab.flow import BuiltinFlow, FlowOptions
from streamstab.synthetic import translating_sequence

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--height", type=int, default=720)
parser.add_argument("--width", type=int, default=1280)
parser.add_argument("--presets", nargs="+", default=sorted(PRESETS))
args = parser.parse_args()

seq = translating_sequence(frames=3, height=args.height, width=args.width, seed=5)
for name in args.presets:
    params = preset(name)
    backend = BuiltinFlow(FlowOptions(downscale=params.flow_downscale))
    state = SessionState(params=params)
    for position in (1, 2, 3):
        state.push_pair(position, seq.inputs[position - 1], seq.processed[position - 1])
    started = time.perf_counter()
    stabilize_step(state, backend)
    total = time.perf_counter() - started
    timing = state.last_timing
    print(
        f"{name:10s} {total * 1e3:8.1f} ms/frame "
        f"(flow {timing.flow_ms:7.1f} ms, solve {timing.solve_ms:7.1f} ms, "
        f"{params.iterations} iterations, flow downscale {params.flow_downscale})"
    )
