"""Suite evaluation: run the pipeline over generated clips, aggregate quality.

Quality runs use the deterministic lockstep mode with a fresh scheduler
state and the same pretrained weights per clip, so a fixed suite seed
reproduces every quality number exactly; wall-clock timing fields are the
only nondeterministic part of a report.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .imaging import Background, BinaryMask, Frame, read_pgm, read_ppm, threshold
from .pipeline import PipelineConfig, RunResult, run_pipeline
from .scheduler import FrameAction, SchedulerConfig
from .student import StudentParams, load_weights
from .teacher import LabelNoise, OracleTeacher, RemoteTeacher

DIFFICULTY_ORDER = ("easy", "medium", "hard")


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["_root"] = str(path.parent)
    return manifest


class ClipFrames:
    """Lazy PPM reader yielding Frames in seq order."""

    def __init__(self, clip_dir: Path, entry: dict):
        self.clip_dir = clip_dir
        self.entry = entry

    def __iter__(self) -> Iterator[Frame]:
        for seq, name in enumerate(self.entry["frame_files"]):
            yield read_ppm(self.clip_dir / name, seq=seq, capture_time=time.monotonic())


class ClipMattes:
    """Lazy PGM ground-truth store: seq -> AlphaMatte."""

    def __init__(self, clip_dir: Path, entry: dict):
        self.clip_dir = clip_dir
        self.files = entry["mask_files"]

    def __contains__(self, seq: int) -> bool:
        return 0 <= seq < len(self.files)

    def __getitem__(self, seq: int):
        if seq not in self:
            raise KeyError(seq)
        return read_pgm(self.clip_dir / self.files[seq])


class ClipMasks:
    """Lazy binary ground-truth store: seq -> BinaryMask (matte >= 0.5)."""

    def __init__(self, mattes: ClipMattes):
        self.mattes = mattes

    def __contains__(self, seq: int) -> bool:
        return seq in self.mattes

    def __getitem__(self, seq: int) -> BinaryMask:
        return threshold(self.mattes[seq], 0.5)


@dataclass
class EvalOptions:
    params: StudentParams | None = None
    weights_path: str | Path | None = None
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    frozen: bool = False  # ablation: keep the pretrained student, no teacher
    teacher: str = "oracle"  # "oracle" | "remote:host:port" | "off"
    teacher_latency_ms: float = 0.0
    teacher_noise: LabelNoise | None = None
    background_rgb: tuple[int, int, int] = (16, 96, 160)
    empty_frame_area_threshold: float = 0.05
    background_weight: float = 1.0

    def resolve_params(self) -> StudentParams:
        if self.params is not None:
            return self.params
        if self.weights_path is None:
            raise ValueError("EvalOptions needs params or weights_path")
        return load_weights(self.weights_path)


def _make_teacher(options: EvalOptions, mattes: ClipMattes, working: tuple[int, int]):
    if options.frozen or options.teacher == "off":
        return None
    if options.teacher == "oracle":
        return OracleTeacher(
            mattes,
            latency_ms=options.teacher_latency_ms,
            noise=options.teacher_noise,
            out_size=working,
        )
    if options.teacher.startswith("remote:"):
        _, host, port = options.teacher.split(":")
        return RemoteTeacher(host, int(port), out_size=working)
    raise ValueError(f"unknown teacher spec {options.teacher!r}")


def evaluate_clip(
    manifest: dict, entry: dict, options: EvalOptions, event_log_path: str | Path | None = None
) -> tuple[dict, RunResult]:
    """Run one clip in lockstep mode and summarize it as a report row."""
    root = Path(manifest["_root"])
    clip_dir = root / entry["dir"]
    params = options.resolve_params()
    working = (params.config.input_width, params.config.input_height)
    mattes = ClipMattes(clip_dir, entry)
    teacher = _make_teacher(options, mattes, working)
    config = PipelineConfig(
        background=Background.solid(entry["width"], entry["height"], options.background_rgb),
        scheduler=options.scheduler,
        working_width=params.config.input_width,
        mode="lockstep",
        distill=teacher is not None,
        empty_frame_area_threshold=options.empty_frame_area_threshold,
        background_weight=options.background_weight,
    )
    started = time.monotonic()
    result = run_pipeline(
        ClipFrames(clip_dir, entry),
        config,
        params,
        teacher=teacher,
        gt_masks=ClipMasks(mattes),
        event_log_path=event_log_path,
    )
    elapsed_ms = (time.monotonic() - started) * 1000.0

    teacher_count = sum(1 for e in result.events if e.action is FrameAction.TEACHER_INFER)
    train_count = sum(1 for e in result.events if e.action is FrameAction.TRAIN_STEP)
    teacher_scores = result.teacher_scores()
    row = {
        "id": entry["id"],
        "difficulty": entry["difficulty"],
        "frames": entry["frames"],
        "consumed": len(result.events),
        "outputs": result.outputs,
        "mean_iou_acc_gt": (
            sum(r.iou_acc for _, r in result.gt_reports) / len(result.gt_reports)
            if result.gt_reports
            else None
        ),
        "mean_iou_acc_teacher": (
            sum(a for _, a in teacher_scores) / len(teacher_scores) if teacher_scores else None
        ),
        "teacher_invocations": teacher_count,
        "train_steps": train_count,
        "final_delta": result.events[-1].delta if result.events else None,
        "pure_background_frames": len(result.pure_background_seqs),
        "absence_frames": result.absence_frames,
        "absence_bg_exact": result.absence_bg_exact,
        "mean_ms_per_frame": elapsed_ms / max(result.outputs, 1),
        "stage_means": {
            name: info["mean_ms"] for name, info in result.timings.report()["stages"].items()
        },
    }
    return row, result


def _event_log_path(event_log_dir, entry: dict):
    if event_log_dir is None:
        return None
    path = Path(event_log_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path / f"{entry['id']}.events.jsonl"


def _evaluate_clip_row(manifest: dict, entry: dict, options: EvalOptions, event_log_dir) -> dict:
    row, _ = evaluate_clip(manifest, entry, options, event_log_path=_event_log_path(event_log_dir, entry))
    return row


def evaluate(
    manifest: dict | str | Path,
    options: EvalOptions,
    workers: int = 1,
    event_log_dir: str | Path | None = None,
) -> dict:
    """Evaluate every clip in a manifest; returns the aggregated report.

    event_log_dir writes one <clip>.events.jsonl per clip. workers > 1
    runs clips in parallel processes; timing fields are dropped from the
    rows in that mode since wall-clock readings taken under contention
    measure the contention, not the pipeline.
    """
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    if workers > 1:
        import multiprocessing
        import os
        from concurrent.futures import ProcessPoolExecutor

        # fresh interpreters with single-threaded BLAS: the per-clip GEMMs
        # are too small for library threading, and workers must not
        # oversubscribe each other
        saved = {k: os.environ.get(k) for k in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS")}
        os.environ["OPENBLAS_NUM_THREADS"] = "1"
        os.environ["OMP_NUM_THREADS"] = "1"
        try:
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                rows = list(
                    pool.map(
                        _evaluate_clip_row,
                        [manifest] * len(manifest["clips"]),
                        manifest["clips"],
                        [options] * len(manifest["clips"]),
                        [event_log_dir] * len(manifest["clips"]),
                    )
                )
        finally:
            for key, value in saved.items():
                if value is None:
                    os.environ.pop(key, None)
                else:
                    os.environ[key] = value
        for row in rows:
            row["mean_ms_per_frame"] = None
            row["stage_means"] = None
    else:
        rows = []
        for entry in manifest["clips"]:
            row, _ = evaluate_clip(
                manifest, entry, options, event_log_path=_event_log_path(event_log_dir, entry)
            )
            rows.append(row)
    by_difficulty: dict[str, dict] = {}
    for diff in DIFFICULTY_ORDER:
        group = [r for r in rows if r["difficulty"] == diff]
        if not group:
            continue
        total_frames = sum(r["frames"] for r in group)
        consumed = sum(r["consumed"] for r in group)
        timed = [r["mean_ms_per_frame"] for r in group if r["mean_ms_per_frame"] is not None]
        by_difficulty[diff] = {
            "clips": len(group),
            "mean_iou_acc_gt": sum(r["mean_iou_acc_gt"] or 0.0 for r in group) / len(group),
            "teacher_invocations_per_frame": (
                sum(r["teacher_invocations"] for r in group) / consumed if consumed else 0.0
            ),
            "train_steps_per_frame": (
                sum(r["train_steps"] for r in group) / consumed if consumed else 0.0
            ),
            "mean_ms_per_frame": sum(timed) / len(timed) if timed else None,
            "total_frames": total_frames,
        }
    return {
        "suite_seed": manifest.get("seed"),
        "frozen": options.frozen,
        "teacher": "off" if options.frozen else options.teacher,
        "scheduler": {
            "u_max": options.scheduler.u_max,
            "delta_min": options.scheduler.delta_min,
            "delta_max": options.scheduler.delta_max,
            "a_thresh": options.scheduler.a_thresh,
            "lr": options.scheduler.lr,
            "area_threshold": options.scheduler.area_threshold,
            "label_mode": options.scheduler.label_mode,
        },
        "clips": rows,
        "by_difficulty": by_difficulty,
    }


TIMING_FIELDS = {"mean_ms_per_frame", "stage_means", "teacher_ms", "train_ms"}


def strip_timing_fields(doc):
    """Deep-copied report with wall-clock fields removed (determinism checks)."""
    if isinstance(doc, dict):
        return {
            k: strip_timing_fields(v)
            for k, v in doc.items()
            if k not in TIMING_FIELDS and not k.endswith("_ms")
        }
    if isinstance(doc, list):
        return [strip_timing_fields(v) for v in doc]
    return doc


def format_difficulty_table(report: dict) -> str:
    """Plain-text quality/speed table split by difficulty."""
    lines = [
        f"{'difficulty':<10} {'clips':>5} {'IoU-Acc(gt)':>12} {'teacher/frame':>14} {'ms/frame':>10}"
    ]
    for diff in DIFFICULTY_ORDER:
        info = report["by_difficulty"].get(diff)
        if not info:
            continue
        ms = f"{info['mean_ms_per_frame']:>10.1f}" if info["mean_ms_per_frame"] is not None else f"{'-':>10}"
        lines.append(
            f"{diff:<10} {info['clips']:>5} {info['mean_iou_acc_gt']:>12.4f} "
            f"{info['teacher_invocations_per_frame']:>14.4f} {ms}"
        )
    return "\n".join(lines)
