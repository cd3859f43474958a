"""Quick demo: one synthetic clip through the threaded pipeline with an oracle teacher.

Writes composited frames (PPM) and a run report under --workdir.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from jitmask.harness import ClipFrames, ClipMasks, ClipMattes
from jitmask.imaging import Background
from jitmask.pipeline import DirectorySink, PipelineConfig, run_pipeline
from jitmask.scheduler import SchedulerConfig
from jitmask.student import StudentConfig, build_student, pretrain, working_height_for
from jitmask.synth import generate_clip, make_pretrain_dataset, suite_specs
from jitmask.teacher import OracleTeacher


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_workdir")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--frames", type=int, default=150)
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--fps", type=float, default=15.0)
    args = parser.parse_args()

    root = Path(args.workdir)
    spec = suite_specs(seed=args.seed, frames=args.frames)[8]  # a medium clip
    entry = generate_clip(spec, root / spec.clip_id)
    print(f"generated {entry['id']} ({entry['difficulty']}, {entry['frames']} frames)")

    working_h = working_height_for(entry["width"], entry["height"], 240)
    params = build_student(StudentConfig(240, working_h, seed=args.seed))
    params = pretrain(
        params, make_pretrain_dataset(150, 240, working_h, seed=args.seed), epochs=2, seed=args.seed
    )

    clip_dir = root / spec.clip_id
    mattes = ClipMattes(clip_dir, entry)
    teacher = OracleTeacher(mattes, latency_ms=91.0, out_size=(240, working_h))
    config = PipelineConfig(
        background=Background.solid(entry["width"], entry["height"], (16, 96, 160)),
        scheduler=SchedulerConfig(lr=args.lr),
        working_width=240,
        mode="threaded",
        source_fps=args.fps,
    )
    result = run_pipeline(
        ClipFrames(clip_dir, entry),
        config,
        params,
        teacher=teacher,
        gt_masks=ClipMasks(mattes),
        sink=DirectorySink(root / "output"),
        event_log_path=root / "events.jsonl",
    )
    report = result.report()
    (root / "report.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    print(f"\ncomposited frames in {root / 'output'}, report in {root / 'report.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
