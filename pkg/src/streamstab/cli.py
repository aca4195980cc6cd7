"""Batch command line: stabilize frame-pair directories, compute flows,
score metrics, or launch the live service.

Every ConsistencyParams field is overridable with a flag of the same name;
a flat key-value YAML config file supplies defaults for anything not given
on the command line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import yaml

from .consistency import ConsistencyParams, PRESETS, preset, stabilize_stream
from .flow import (
    BuiltinFlow,
    CachingFlow,
    FloDirFlow,
    FlowOptions,
    estimate_flow,
    flow_to_color,
)
from .imgio import FrameSource, discover_source, save_frame, write_flo
from .metrics import ssim_report, warping_error

log = logging.getLogger("streamstab")

PARAM_FLAGS = ("k1", "k2", "alpha", "lambda", "eta", "kappa", "iterations", "flow_downscale")


class CliError(Exception):
    """User-facing command failure; message printed, exit status 1."""


@dataclass
class JobConfig:
    input_dir: Path
    processed_dir: Path
    output_dir: Path
    params: ConsistencyParams
    preset_name: str | None
    flow_backend: str = "builtin"
    flo_dir: Path | None = None
    cache_dir: Path | None = None
    pattern: str | None = None
    flow_opts: FlowOptions | None = None


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from exc
    data = yaml.safe_load(raw) or {}
    if not isinstance(data, dict):
        raise CliError(f"config file {path} must be a flat key-value mapping")
    return data


def _resolve_params(args, config: dict) -> tuple[ConsistencyParams, str | None]:
    preset_name = args.preset or config.get("preset")
    params = preset(preset_name) if preset_name else ConsistencyParams()
    overrides = {}
    for name in PARAM_FLAGS:
        value = getattr(args, name.replace("-", "_"), None)
        if value is None:
            value = config.get(name)
        if value is not None:
            overrides[name] = value
    if overrides:
        params = ConsistencyParams.from_dict(overrides, base=params)
    else:
        params.validate()
    return params, preset_name


def _setting(args, config: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value is None:
        value = config.get(key, default)
    return value


def _flow_options_from_config(config: dict, params: ConsistencyParams) -> FlowOptions:
    """Estimator knobs are config-file-only; downscale also rides on params."""
    return FlowOptions(
        levels=int(config.get("flow_levels", FlowOptions.levels)),
        patch_size=int(config.get("flow_patch_size", FlowOptions.patch_size)),
        iterations_per_level=int(
            config.get("flow_search_iterations", FlowOptions.iterations_per_level)
        ),
        downscale=params.flow_downscale,
    )


def _build_flow_backend(kind: str, params: ConsistencyParams, flo_dir, cache_dir,
                        opts: FlowOptions | None = None):
    if kind == "flo-dir":
        if flo_dir is None:
            raise CliError("--flo-dir is required with --flow-backend flo-dir")
        backend = FloDirFlow(flo_dir)
    elif kind == "builtin":
        backend = BuiltinFlow(opts or FlowOptions(downscale=params.flow_downscale))
    else:
        raise CliError(f"unknown flow backend {kind!r}")
    if cache_dir is not None:
        backend = CachingFlow(backend, cache_dir)
    return backend


def _paired_sources(input_dir, processed_dir, pattern) -> tuple[FrameSource, FrameSource]:
    inputs = discover_source(input_dir, pattern)
    processed = discover_source(processed_dir, pattern)
    if pattern is not None:
        missing_in_processed = sorted(set(inputs.file_numbers) - set(processed.file_numbers))
        missing_in_input = sorted(set(processed.file_numbers) - set(inputs.file_numbers))
        if missing_in_processed:
            raise CliError(
                f"processed dir {processed_dir} missing frame {missing_in_processed[0]}"
            )
        if missing_in_input:
            raise CliError(f"input dir {input_dir} missing frame {missing_in_input[0]}")
    if len(inputs) != len(processed):
        raise CliError(
            f"sequence length mismatch: {len(inputs)} input vs {len(processed)} processed frames"
        )
    if (inputs.width, inputs.height) != (processed.width, processed.height):
        raise CliError(
            f"resolution mismatch: input {inputs.width}x{inputs.height} "
            f"vs processed {processed.width}x{processed.height}"
        )
    return inputs, processed


def cmd_stabilize(args) -> int:
    config = _load_config_file(args.config)
    params, preset_name = _resolve_params(args, config)
    input_dir = _setting(args, config, "input")
    processed_dir = _setting(args, config, "processed")
    output_dir = _setting(args, config, "output")
    if not (input_dir and processed_dir and output_dir):
        raise CliError("stabilize needs --input, --processed and --output")
    job = JobConfig(
        input_dir=Path(input_dir),
        processed_dir=Path(processed_dir),
        output_dir=Path(output_dir),
        params=params,
        preset_name=preset_name,
        flow_backend=_setting(args, config, "flow_backend", "builtin"),
        flo_dir=_maybe_path(_setting(args, config, "flo_dir")),
        cache_dir=_maybe_path(_setting(args, config, "cache_dir")),
        pattern=_setting(args, config, "pattern"),
        flow_opts=_flow_options_from_config(config, params),
    )
    run_stabilize(job)
    return 0


def _maybe_path(value) -> Path | None:
    return Path(value) if value is not None else None


def run_stabilize(job: JobConfig) -> list[Path]:
    inputs, processed = _paired_sources(job.input_dir, job.processed_dir, job.pattern)
    backend = _build_flow_backend(
        job.flow_backend, job.params, job.flo_dir, job.cache_dir, job.flow_opts
    )
    job.output_dir.mkdir(parents=True, exist_ok=True)
    log.info(
        "stabilizing %d frames at %dx%d (preset=%s, flow=%s)",
        len(inputs),
        inputs.width,
        inputs.height,
        job.preset_name or "custom",
        backend.backend_id,
    )
    written: list[Path] = []
    pairs = ((inputs.frame(pos), processed.frame(pos)) for pos in inputs.indices)
    started = time.perf_counter()
    try:
        for position, output in stabilize_stream(pairs, job.params, backend):
            out_path = job.output_dir / processed.paths[position - 1].name
            save_frame(output, out_path)
            written.append(out_path)
            elapsed = time.perf_counter() - started
            log.info("frame %d done in %.1f ms", position, elapsed * 1e3)
            started = time.perf_counter()
    except Exception as exc:
        failing = len(written) + 1
        raise CliError(f"stabilization failed at frame {failing}: {exc}") from exc
    return written


def cmd_flow(args) -> int:
    source = discover_source(args.frames, args.pattern)
    if len(source) < 2:
        raise CliError(f"need at least 2 frames in {args.frames}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    opts = FlowOptions(downscale=args.flow_downscale or 1)
    previous = source.frame(1)
    for pos in range(2, len(source) + 1):
        current = source.frame(pos)
        forward = estimate_flow(previous, current, opts)
        write_flo(forward, out_dir / (FloDirFlow.TEMPLATE % (pos - 1, pos)))
        if not args.forward_only:
            reverse = estimate_flow(current, previous, opts)
            write_flo(reverse, out_dir / (FloDirFlow.TEMPLATE % (pos, pos - 1)))
        if args.viz:
            save_frame(flow_to_color(forward), out_dir / f"flow_{pos - 1:05d}_to_{pos:05d}.png")
        log.info("flow pair %d -> %d written", pos - 1, pos)
        previous = current
    return 0


def cmd_metrics(args) -> int:
    candidate = discover_source(args.candidate, args.pattern)
    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    if args.which == "ssim":
        if not args.reference:
            raise CliError("ssim needs --reference")
        reference = discover_source(args.reference, args.pattern)
        if len(reference) != len(candidate):
            raise CliError(
                f"length mismatch: {len(candidate)} candidate vs {len(reference)} reference"
            )
        report = ssim_report(iter(candidate), iter(reference))
    else:
        params = ConsistencyParams() if args.flow_downscale is None else ConsistencyParams(
            flow_downscale=args.flow_downscale
        )
        backend = _build_flow_backend(
            args.flow_backend or "builtin", params, _maybe_path(args.flo_dir), _maybe_path(args.cache_dir)
        )
        report = warping_error(iter(candidate), backend)
        if args.reference:
            reference = discover_source(args.reference, args.pattern)
            ref_report = warping_error(iter(reference), backend)
            report.preset = args.preset
            summary = report.summary()
            summary["reference_mean"] = ref_report.mean
            summary["ratio"] = report.mean / ref_report.mean if ref_report.mean else None
            report.write_csv(out_prefix.with_suffix(".csv"))
            out_prefix.with_suffix(".json").write_text(json.dumps(summary, indent=2) + "\n")
            log.info("%s mean=%.6f (reference %.6f)", report.name, report.mean, ref_report.mean)
            return 0
    report.preset = args.preset
    report.write_csv(out_prefix.with_suffix(".csv"))
    report.write_json(out_prefix.with_suffix(".json"))
    log.info("%s mean=%.6f over %d frames", report.name, report.mean, report.count)
    return 0


def cmd_serve(args) -> int:
    from .service import run_server

    run_server(args.config, args.listen)
    return 0


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named parameter bundle")
    parser.add_argument("--k1", type=float, help="clamp bound for previous-frame weight")
    parser.add_argument("--k2", type=float, help="clamp bound for next-frame weight")
    parser.add_argument("--alpha", type=float, help="residual sharpness")
    parser.add_argument("--lambda", type=float, dest="lambda", help="smoothness scale")
    parser.add_argument("--eta", type=float, help="solver step size")
    parser.add_argument("--kappa", type=float, help="solver momentum")
    parser.add_argument("--iterations", type=int, help="solver iteration count")
    parser.add_argument("--flow-downscale", type=int, dest="flow_downscale", choices=(1, 2, 4))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamstab",
        description="Temporally consistent stylized video streaming",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_stab = sub.add_parser("stabilize", help="stabilize a frame-pair directory tree")
    p_stab.add_argument("--config", help="flat key-value YAML config file")
    p_stab.add_argument("--input", help="directory of original frames")
    p_stab.add_argument("--processed", help="directory of per-frame stylized frames")
    p_stab.add_argument("--output", help="directory for stabilized frames")
    p_stab.add_argument("--flow-backend", dest="flow_backend", choices=("builtin", "flo-dir"))
    p_stab.add_argument("--flo-dir", dest="flo_dir", help="directory of precomputed .flo files")
    p_stab.add_argument("--cache-dir", dest="cache_dir", help="flow cache directory")
    p_stab.add_argument("--pattern", help="frame name pattern, e.g. frame_%%05d.png")
    _add_param_flags(p_stab)
    p_stab.set_defaults(func=cmd_stabilize)

    p_flow = sub.add_parser("flow", help="write .flo fields for consecutive frames")
    p_flow.add_argument("frames", help="directory of frames")
    p_flow.add_argument("out", help="output directory for .flo files")
    p_flow.add_argument("--pattern", help="frame name pattern")
    p_flow.add_argument("--forward-only", action="store_true", help="skip reverse-direction fields")
    p_flow.add_argument("--viz", action="store_true", help="also write color-coded PNGs")
    p_flow.add_argument("--flow-downscale", type=int, dest="flow_downscale", choices=(1, 2, 4))
    p_flow.set_defaults(func=cmd_flow)

    p_met = sub.add_parser("metrics", help="score a frame sequence")
    p_met.add_argument("--candidate", required=True, help="directory of frames to score")
    p_met.add_argument("--reference", help="reference directory (required for ssim)")
    p_met.add_argument("--which", choices=("ssim", "ewarp"), required=True)
    p_met.add_argument("--out", required=True, help="output path prefix for .csv/.json")
    p_met.add_argument("--pattern", help="frame name pattern")
    p_met.add_argument("--preset", help="preset name recorded in the report")
    p_met.add_argument("--flow-backend", dest="flow_backend", choices=("builtin", "flo-dir"))
    p_met.add_argument("--flo-dir", dest="flo_dir")
    p_met.add_argument("--cache-dir", dest="cache_dir")
    p_met.add_argument("--flow-downscale", type=int, dest="flow_downscale", choices=(1, 2, 4))
    p_met.set_defaults(func=cmd_metrics)

    p_srv = sub.add_parser("serve", help="launch the live session server")
    p_srv.add_argument("--config", required=True, help="server config file")
    p_srv.add_argument("--listen", default="127.0.0.1:8787", help="host:port to bind")
    p_srv.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - report anything as a command failure
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
