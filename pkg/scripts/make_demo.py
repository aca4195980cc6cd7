#!/usr/bin/env python3
"""Write a synthetic demo corpus (input/ and processed/ frame dirs) to disk.

The result is directly usable with the CLI and the live server:

    python scripts/make_demo.py demo/
    streamstab stabilize --input demo/input --processed demo/processed \
        --output demo/stabilized --preset default
"""

import argparse
from pathlib import Path

from streamstab.imgio import save_frame
from streamstab.synthetic import translating_sequence

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("out", help="output directory")
parser.add_argument("--frames", type=int, default=24)
parser.add_argument("--height", type=int, default=180)
parser.add_argument("--width", type=int, default=240)
parser.add_argument("--noise", type=float, default=0.05, help="flicker noise sigma")
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

root = Path(args.out)
input_dir = root / "input"
processed_dir = root / "processed"
input_dir.mkdir(parents=True, exist_ok=True)
processed_dir.mkdir(parents=True, exist_ok=True)

seq = translating_sequence(
    frames=args.frames,
    height=args.height,
    width=args.width,
    noise_sigma=args.noise,
    seed=args.seed,
)
for i, (inp, proc) in enumerate(zip(seq.inputs, seq.processed), start=1):
    save_frame(inp, input_dir / f"frame_{i:05d}.png")
    save_frame(proc, processed_dir / f"frame_{i:05d}.png")

config = root / "server.yaml"
config.write_text(
    "\n".join(
        [
            f"source.demo.input: {input_dir}",
            f"source.demo.processed: {processed_dir}",
            "source.demo.pattern: frame_%05d.png",
            "preset: default",
        ]
    )
    + "\n"
)
print(f"wrote {args.frames} frame pairs under {root} (per-step motion {seq.step_u},{seq.step_v})")
print(f"server config: {config}")
