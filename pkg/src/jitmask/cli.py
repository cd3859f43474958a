"""Command-line interface: generate, pretrain, run, eval, serve-echo.

The JITM_SEED environment variable overrides the default seed of every
subcommand that takes one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .harness import EvalOptions, evaluate, format_difficulty_table, load_manifest
from .imaging import Background, PnmError, read_ppm
from .scheduler import SchedulerConfig
from .student import (
    StudentConfig,
    build_student,
    pretrain,
    save_weights,
    working_height_for,
)
from .synth import SyntheticSceneSpec, generate_clip, generate_suite, make_pretrain_dataset
from .teacher import serve_echo

DEFAULT_SEED = 7


def _seed_default() -> int:
    env = os.environ.get("JITM_SEED")
    return int(env) if env else DEFAULT_SEED


def _add_scheduler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--u-max", type=int, default=8)
    p.add_argument("--delta-min", type=int, default=8)
    p.add_argument("--delta-max", type=int, default=64)
    p.add_argument("--a-thresh", type=float, default=0.9)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--area-threshold", type=float, default=0.05)
    p.add_argument("--label-mode", choices=["stale-label", "cached-pair"], default="stale-label")


def _scheduler_from(args) -> SchedulerConfig:
    return SchedulerConfig(
        u_max=args.u_max,
        delta_min=args.delta_min,
        delta_max=args.delta_max,
        a_thresh=args.a_thresh,
        lr=args.lr,
        area_threshold=args.area_threshold,
        label_mode=args.label_mode,
    )


def _parse_background(spec: str, width: int, height: int) -> Background:
    if spec.startswith("solid:"):
        hexval = spec.removeprefix("solid:").lstrip("#")
        if len(hexval) != 6:
            raise ValueError(f"expected solid:RRGGBB, got {spec!r}")
        rgb = tuple(int(hexval[i : i + 2], 16) for i in (0, 2, 4))
        return Background.solid(width, height, rgb)
    frame = read_ppm(spec)
    if (frame.width, frame.height) != (width, height):
        from .imaging import resize_bilinear_rgb

        frame = resize_bilinear_rgb(frame, width, height)
    return Background.from_frame(frame)


def cmd_generate(args) -> int:
    if args.spec:
        spec = SyntheticSceneSpec.from_json_dict(json.loads(Path(args.spec).read_text()))
        entry = generate_clip(spec, Path(args.out_dir) / spec.clip_id)
        print(json.dumps(entry, indent=2))
    else:
        manifest = generate_suite(
            args.out_dir, seed=args.seed, frames=args.frames, width=args.width, height=args.height
        )
        counts = {}
        for clip in manifest["clips"]:
            counts[clip["difficulty"]] = counts.get(clip["difficulty"], 0) + 1
        print(f"wrote {len(manifest['clips'])} clips to {args.out_dir} ({counts})")
    return 0


def cmd_pretrain(args) -> int:
    working_h = args.working_height or working_height_for(
        args.source_width, args.source_height, args.working_width
    )
    config = StudentConfig(input_width=args.working_width, input_height=working_h, seed=args.seed)
    params = build_student(config)
    dataset = make_pretrain_dataset(args.samples, args.working_width, working_h, seed=args.seed)
    losses: list[float] = []
    started = time.monotonic()
    params = pretrain(params, dataset, epochs=args.epochs, seed=args.seed, epoch_losses=losses)
    save_weights(params, args.out)
    elapsed = time.monotonic() - started
    print(
        f"pretrained {args.working_width}x{working_h} student on {args.samples} samples, "
        f"{args.epochs} epochs in {elapsed:.1f}s; epoch losses: "
        + ", ".join(f"{v:.4f}" for v in losses)
    )
    print(f"weights written to {args.out} (+ .json sidecar)")
    return 0


def _read_ppm_stream(buf, seq):
    """Read one binary PPM document from a byte stream, or None at EOF."""
    magic = buf.read(2)
    if not magic:
        return None
    if magic != b"P6":
        raise PnmError(f"stream frame {seq}: bad magic {magic!r}")
    fields = []
    tok = b""
    while len(fields) < 3:
        c = buf.read(1)
        if not c:
            raise PnmError(f"stream frame {seq}: truncated header")
        if c == b"#":
            while c and c not in b"\r\n":
                c = buf.read(1)
            continue
        if c.isspace():
            if tok:
                fields.append(int(tok))
                tok = b""
            continue
        tok += c
    width, height, maxval = fields
    if maxval != 255:
        raise PnmError(f"stream frame {seq}: maxval {maxval} unsupported")
    payload = buf.read(width * height * 3)
    if len(payload) < width * height * 3:
        raise PnmError(f"stream frame {seq}: truncated payload")
    import numpy as np

    from .imaging import Frame

    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Frame(width, height, pixels, seq=seq, capture_time=time.monotonic())


def cmd_run(args) -> int:
    from .pipeline import DirectorySink, PipelineConfig, StreamSink, run_pipeline
    from .student import load_weights
    from .teacher import OracleTeacher, RemoteTeacher

    if not args.clip and not args.stdin:
        print("run needs --clip DIR or --stdin", file=sys.stderr)
        return 2

    params = load_weights(args.weights)
    working = (params.config.input_width, params.config.input_height)
    if args.working_width and args.working_width != params.config.input_width:
        print(
            f"note: weights were built for width {params.config.input_width}; "
            f"--working-width {args.working_width} ignored",
            file=sys.stderr,
        )

    if args.clip:
        clip_dir = Path(args.clip)
        doc = json.loads((clip_dir / "clip.json").read_text())
        entry = doc["entry"]
        from .harness import ClipFrames, ClipMasks, ClipMattes

        frames = ClipFrames(clip_dir, entry)
        mattes = ClipMattes(clip_dir, entry)
        gt_masks = ClipMasks(mattes)
        width, height = entry["width"], entry["height"]
    else:

        def stdin_frames():
            seq = 0
            while True:
                frame = _read_ppm_stream(sys.stdin.buffer, seq)
                if frame is None:
                    return
                yield frame
                seq += 1

        frames = stdin_frames()
        mattes = None
        gt_masks = None
        if not args.size:
            print("--stdin requires --size WxH", file=sys.stderr)
            return 2
        width, height = (int(v) for v in args.size.lower().split("x"))

    teacher = None
    if args.teacher == "oracle":
        if mattes is None:
            print("oracle teacher needs a clip with ground truth", file=sys.stderr)
            return 2
        teacher = OracleTeacher(
            mattes, latency_ms=args.teacher_latency_ms, out_size=working
        )
    elif args.teacher.startswith("remote:"):
        _, host, port = args.teacher.split(":")
        teacher = RemoteTeacher(host, int(port), out_size=working)
    elif args.teacher != "off":
        print(f"unknown teacher {args.teacher!r}", file=sys.stderr)
        return 2

    config = PipelineConfig(
        background=_parse_background(args.background, width, height),
        scheduler=_scheduler_from(args),
        working_width=params.config.input_width,
        mode=args.mode,
        source_fps=args.fps,
        distill=teacher is not None,
    )
    sink = None
    if args.out_dir:
        sink = DirectorySink(args.out_dir)
    elif args.stdout_ppm:
        sink = StreamSink(sys.stdout.buffer)

    result = run_pipeline(
        frames,
        config,
        params,
        teacher=teacher,
        gt_masks=gt_masks,
        sink=sink,
        event_log_path=args.event_log,
    )
    doc = result.report()
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2))
    if not args.stdout_ppm:
        print(json.dumps(doc, indent=2))
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    options = EvalOptions(
        weights_path=args.weights,
        scheduler=_scheduler_from(args),
        frozen=args.frozen,
        teacher=args.teacher,
        teacher_latency_ms=args.teacher_latency_ms,
    )
    report = evaluate(manifest, options, workers=args.workers, event_log_dir=args.event_log_dir)
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2))
        print(f"report written to {args.report}")
    print(format_difficulty_table(report))
    return 0


def cmd_serve_echo(args) -> int:
    serve_echo(args.host, args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jitmask",
        description="Virtual-background pipeline with online student distillation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate the synthetic clip suite or one clip")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=_seed_default())
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--spec", help="JSON clip spec file (single-clip mode)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("pretrain", help="build and pretrain a student, write weights")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=_seed_default())
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--working-width", type=int, choices=[240, 320], default=240)
    p.add_argument("--working-height", type=int, default=None)
    p.add_argument("--source-width", type=int, default=320)
    p.add_argument("--source-height", type=int, default=240)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("run", help="run the pipeline over a clip or a stdin PPM stream")
    p.add_argument("--clip", help="clip directory produced by generate")
    p.add_argument("--stdin", action="store_true", help="read concatenated PPMs from stdin")
    p.add_argument("--size", help="WxH of the stdin stream")
    p.add_argument("--weights", required=True)
    p.add_argument("--background", default="solid:1060A0")
    p.add_argument("--working-width", type=int, choices=[240, 320], default=None)
    p.add_argument("--teacher", default="oracle", help="oracle | remote:host:port | off")
    p.add_argument("--teacher-latency-ms", type=float, default=0.0)
    p.add_argument("--mode", choices=["threaded", "lockstep"], default="threaded")
    p.add_argument("--fps", type=float, default=None, help="pace the source at this rate")
    p.add_argument("--out-dir", help="write numbered output PPMs here")
    p.add_argument("--stdout-ppm", action="store_true", help="stream output PPMs to stdout")
    p.add_argument("--report", help="write the run report JSON here")
    p.add_argument("--event-log", help="write scheduler events as JSON lines here")
    _add_scheduler_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="evaluate the full suite")
    p.add_argument("--manifest", required=True, help="suite directory or manifest.json")
    p.add_argument("--weights", required=True)
    p.add_argument("--report", help="write the evaluation report JSON here")
    p.add_argument("--frozen", action="store_true", help="ablation: frozen pretrained student")
    p.add_argument("--teacher", default="oracle")
    p.add_argument("--teacher-latency-ms", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1, help="parallel clips (disables timing fields)")
    p.add_argument("--event-log-dir", help="write per-clip scheduler event logs here")
    _add_scheduler_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve-echo", help="reference echo teacher server (protocol tests)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7461)
    p.set_defaults(fn=cmd_serve_echo)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, PnmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
