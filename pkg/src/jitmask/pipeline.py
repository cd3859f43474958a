"""End-to-end runtime: source -> preprocess -> inference -> composite -> sink.

Two execution modes share the same per-frame logic:

* threaded: each stage is a thread joined by bounded drop-oldest queues
  (capacity 2 by default), with the distillation loop running alongside,
  fed by a latest-value mailbox so it samples rather than queues. This is
  the deployment shape; the inference path never waits on the teacher or
  on training.
* lockstep: one thread, every frame flows through distillation and the
  inference path in order. Fully deterministic, used for quality
  evaluation and reproducibility checks.

The empty-frame heuristic outputs the replacement background verbatim
whenever the predicted mask area falls below a threshold, so streams with
nobody in frame degrade to a clean background instead of noise.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

from .imaging import (
    AlphaMatte,
    Background,
    BinaryMask,
    Frame,
    composite,
    ppm_bytes,
    resize_bilinear_alpha,
    resize_bilinear_rgb,
    threshold,
    write_ppm,
)
from .metrics import MetricReport, iou_acc
from .scheduler import (
    FrameAction,
    OnlineStudentHooks,
    SchedulerConfig,
    SchedulerEvent,
    SchedulerState,
    run_distillation_loop,
    step,
)
from .student import SnapshotStore, StudentParams, frame_to_tensor, predict
from .teacher import TeacherLabel

STAGES = ("camera", "preprocess", "inference", "output")


class OutputChoice(Enum):
    USE_MATTE = "use_matte"
    PURE_BACKGROUND = "pure_background"


def empty_frame_heuristic(matte: AlphaMatte, area_threshold: float = 0.05) -> OutputChoice:
    """Pure background when the binarized matte covers under the threshold."""
    area = float((matte.values >= 0.5).mean())
    return OutputChoice.PURE_BACKGROUND if area < area_threshold else OutputChoice.USE_MATTE


class StageTimings:
    """Per-stage duration accumulators plus inter-output intervals."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._sums = {name: 0.0 for name in STAGES}
        self._counts = {name: 0 for name in STAGES}
        self._last_output_at: float | None = None
        self._interval_sum = 0.0
        self._interval_count = 0

    def record(self, stage: str, duration_ms: float) -> None:
        if stage not in self._sums:
            raise ValueError(f"unknown stage {stage!r}, expected one of {STAGES}")
        if duration_ms < 0:
            raise ValueError(f"duration must be >= 0, got {duration_ms}")
        with self._lock:
            self._sums[stage] += duration_ms
            self._counts[stage] += 1

    def note_output(self, timestamp: float | None = None) -> None:
        """Mark one completed composite; consecutive marks define the intervals."""
        now = time.monotonic() if timestamp is None else timestamp
        with self._lock:
            if self._last_output_at is not None:
                self._interval_sum += (now - self._last_output_at) * 1000.0
                self._interval_count += 1
            self._last_output_at = now

    def mean_ms(self, stage: str) -> float | None:
        if self._counts.get(stage, 0) == 0:
            return None
        return self._sums[stage] / self._counts[stage]

    @property
    def mean_inter_output_ms(self) -> float | None:
        if self._interval_count == 0:
            return None
        return self._interval_sum / self._interval_count

    def report(self) -> dict:
        """Stage means in ms; stages with no samples are omitted."""
        with self._lock:
            stages = {
                name: {"mean_ms": self._sums[name] / self._counts[name], "count": self._counts[name]}
                for name in STAGES
                if self._counts[name] > 0
            }
            doc: dict = {"stages": stages}
            if self._interval_count:
                doc["mean_inter_output_ms"] = self._interval_sum / self._interval_count
            return doc


def record_stage(timings: StageTimings, stage: str, duration_ms: float) -> StageTimings:
    timings.record(stage, duration_ms)
    return timings


def report(timings: StageTimings) -> dict:
    return timings.report()


# --- channels ----------------------------------------------------------------

class DropOldestQueue:
    """Bounded FIFO whose put never blocks: a full queue drops its oldest item."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self._items: deque = deque()
        self._capacity = capacity
        self._lock = threading.Lock()
        self._nonempty = threading.Condition(self._lock)
        self._closed = False
        self.dropped = 0

    def put(self, item) -> None:
        with self._nonempty:
            if self._closed:
                return
            if len(self._items) >= self._capacity:
                self._items.popleft()
                self.dropped += 1
            self._items.append(item)
            self._nonempty.notify()

    def close(self) -> None:
        with self._nonempty:
            self._closed = True
            self._nonempty.notify_all()

    def __iter__(self) -> Iterator:
        while True:
            with self._nonempty:
                while not self._items and not self._closed:
                    self._nonempty.wait(timeout=0.1)
                if not self._items and self._closed:
                    return
                item = self._items.popleft()
            yield item  # outside the lock: consumers must never stall producers


class LatestMailbox:
    """Capacity-1 overwrite slot; the reader always takes the newest item."""

    def __init__(self) -> None:
        self._item = None
        self._have = False
        self._lock = threading.Lock()
        self._fresh = threading.Condition(self._lock)
        self._closed = False

    def put(self, item) -> None:
        with self._fresh:
            if self._closed:
                return
            self._item = item
            self._have = True
            self._fresh.notify()

    def close(self) -> None:
        with self._fresh:
            self._closed = True
            self._fresh.notify_all()

    def __iter__(self) -> Iterator:
        while True:
            with self._fresh:
                while not self._have and not self._closed:
                    self._fresh.wait(timeout=0.1)
                if not self._have and self._closed:
                    return
                item = self._item
                self._item = None
                self._have = False
            yield item  # outside the lock


# --- sinks ---------------------------------------------------------------------

class NullSink:
    def write(self, frame: Frame) -> None:
        pass

    def close(self) -> None:
        pass


class DirectorySink:
    """Numbered PPM frames under a directory."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.count = 0

    def write(self, frame: Frame) -> None:
        write_ppm(frame, self.out_dir / f"{self.count:06d}.ppm")
        self.count += 1

    def close(self) -> None:
        pass


class StreamSink:
    """Concatenated binary PPM documents on a byte stream (e.g. stdout)."""

    def __init__(self, stream):
        self.stream = stream

    def write(self, frame: Frame) -> None:
        self.stream.write(ppm_bytes(frame))

    def close(self) -> None:
        try:
            self.stream.flush()
        except (OSError, ValueError):
            pass


class CallbackSink:
    def __init__(self, fn: Callable[[Frame], None]):
        self.fn = fn

    def write(self, frame: Frame) -> None:
        self.fn(frame)

    def close(self) -> None:
        pass


# --- configuration and results ---------------------------------------------------

@dataclass
class PipelineConfig:
    background: Background
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    working_width: int = 240
    queue_capacity: int = 2
    drop_policy: str = "drop-oldest"
    empty_frame_area_threshold: float = 0.05
    mode: str = "threaded"  # or "lockstep"
    source_fps: float | None = None
    distill: bool = True
    freeze_distillation: bool = False
    background_weight: float = 1.0
    slow_sink_ms: float = 0.0  # test hook: artificial delay in the output stage

    def __post_init__(self) -> None:
        if self.queue_capacity < 1:
            raise ValueError(f"queue_capacity must be >= 1, got {self.queue_capacity}")
        if self.drop_policy != "drop-oldest":
            raise ValueError(f"unsupported drop policy {self.drop_policy!r}")
        if self.mode not in ("threaded", "lockstep"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class RunResult:
    outputs: int
    output_seqs: list[int]
    params_versions: list[int]
    timings: StageTimings
    events: list[SchedulerEvent]
    gt_reports: list[tuple[int, MetricReport]]
    pure_background_seqs: list[int]
    absence_frames: int
    absence_bg_exact: int
    dropped: int
    source_error: str | None = None

    def teacher_scores(self) -> list[tuple[int, float]]:
        """(t, IoU-Acc vs teacher label) for every teacher-inference frame."""
        return [(e.t, e.a_curr) for e in self.events if e.action is FrameAction.TEACHER_INFER]

    def report(self) -> dict:
        doc = self.timings.report()
        doc["outputs"] = self.outputs
        doc["dropped"] = self.dropped
        actions: dict[str, int] = {}
        for e in self.events:
            actions[e.action.value] = actions.get(e.action.value, 0) + 1
        doc["scheduler_actions"] = actions
        doc["consumed_frames"] = len(self.events)
        if self.gt_reports:
            doc["mean_iou_acc_gt"] = sum(r.iou_acc for _, r in self.gt_reports) / len(self.gt_reports)
        teacher = self.teacher_scores()
        if teacher:
            doc["mean_iou_acc_teacher"] = sum(a for _, a in teacher) / len(teacher)
        doc["pure_background_frames"] = len(self.pure_background_seqs)
        doc["absence_frames"] = self.absence_frames
        doc["absence_bg_exact"] = self.absence_bg_exact
        if self.source_error:
            doc["source_error"] = self.source_error
        return doc


class _EventLog:
    """JSON-lines event sink, one object per consumed frame."""

    def __init__(self, path: str | Path | None):
        self._fh = open(path, "w") if path else None

    def write(self, event: SchedulerEvent) -> None:
        if self._fh:
            self._fh.write(json.dumps(event.to_json_dict()) + "\n")

    def close(self) -> None:
        if self._fh:
            self._fh.close()


# --- the runtime -----------------------------------------------------------------

class _Paced:
    """Wrap a frame source with optional fixed-rate pacing.

    Acquisition time (the camera stage) is measured around the underlying
    iterator only; pacing sleep is idle waiting, not work.
    """

    def __init__(self, source: Iterable[Frame], fps: float | None, timings: StageTimings):
        self._it = iter(source)
        self._interval = (1.0 / fps) if fps else 0.0
        self._next_due = time.monotonic()
        self._timings = timings

    def __iter__(self) -> Iterator[Frame]:
        while True:
            if self._interval:
                now = time.monotonic()
                if now < self._next_due:
                    time.sleep(self._next_due - now)
                self._next_due = max(self._next_due + self._interval, time.monotonic())
            started = time.monotonic()
            try:
                frame = next(self._it)
            except StopIteration:
                return
            self._timings.record("camera", (time.monotonic() - started) * 1000.0)
            yield frame


def _preprocess(frame: Frame, working_w: int, working_h: int):
    small = (
        frame
        if (frame.width, frame.height) == (working_w, working_h)
        else resize_bilinear_rgb(frame, working_w, working_h)
    )
    return frame_to_tensor(small)


class _OutputStage:
    """Upsample, empty-frame heuristic, composite, sink, quality accounting."""

    def __init__(
        self,
        config: PipelineConfig,
        sink,
        gt_masks: Mapping[int, BinaryMask] | None,
        timings: StageTimings,
        result: RunResult,
    ):
        self.config = config
        self.sink = sink or NullSink()
        self.gt_masks = gt_masks
        self.timings = timings
        self.result = result
        self._bg_frame_cache: Frame | None = None

    def _background_frame(self, like: Frame) -> Frame:
        if self._bg_frame_cache is None:
            bg = self.config.background
            self._bg_frame_cache = Frame(bg.width, bg.height, bg.image)
        return Frame(
            self._bg_frame_cache.width,
            self._bg_frame_cache.height,
            self._bg_frame_cache.pixels,
            seq=like.seq,
            capture_time=like.capture_time,
        )

    def handle(self, frame: Frame, matte: AlphaMatte, params_version: int) -> None:
        cfg = self.config
        started = time.monotonic()
        matte_full = resize_bilinear_alpha(matte, frame.width, frame.height)
        choice = empty_frame_heuristic(matte_full, cfg.empty_frame_area_threshold)
        if choice is OutputChoice.PURE_BACKGROUND:
            out = self._background_frame(frame)
        else:
            out = composite(frame, matte_full, cfg.background)
        self.timings.note_output()
        if cfg.slow_sink_ms:
            time.sleep(cfg.slow_sink_ms / 1000.0)
        self.sink.write(out)
        self.timings.record("output", (time.monotonic() - started) * 1000.0)

        res = self.result
        res.outputs += 1
        res.output_seqs.append(frame.seq)
        res.params_versions.append(params_version)
        if choice is OutputChoice.PURE_BACKGROUND:
            res.pure_background_seqs.append(frame.seq)

        if self.gt_masks is not None and frame.seq in self.gt_masks:
            gt = self.gt_masks[frame.seq]
            if choice is OutputChoice.PURE_BACKGROUND:
                pred_mask = BinaryMask(gt.width, gt.height, np.zeros((gt.height, gt.width), dtype=bool))
            else:
                pred_mask = threshold(matte_full, 0.5)
            res.gt_reports.append((frame.seq, iou_acc(pred_mask, gt, cfg.scheduler.area_threshold)))
            if not gt.bits.any():
                res.absence_frames += 1
                if choice is OutputChoice.PURE_BACKGROUND or np.array_equal(
                    out.pixels, cfg.background.image
                ):
                    res.absence_bg_exact += 1


def run_pipeline(
    source: Iterable[Frame],
    config: PipelineConfig,
    params: StudentParams,
    teacher: Callable[[Frame], TeacherLabel] | None = None,
    gt_masks: Mapping[int, BinaryMask] | None = None,
    sink=None,
    event_log_path: str | Path | None = None,
) -> RunResult:
    """Run the full pipeline over a frame source and collect a RunResult.

    teacher=None (or config.distill=False) disables online distillation:
    the published pretrained snapshot serves every frame.
    """
    timings = StageTimings()
    result = RunResult(
        outputs=0,
        output_seqs=[],
        params_versions=[],
        timings=timings,
        events=[],
        gt_reports=[],
        pure_background_seqs=[],
        absence_frames=0,
        absence_bg_exact=0,
        dropped=0,
    )
    store = SnapshotStore(params)
    distilling = config.distill and teacher is not None
    event_log = _EventLog(event_log_path)
    out_stage = _OutputStage(config, sink, gt_masks, timings, result)
    working_w = params.config.input_width
    working_h = params.config.input_height

    try:
        if config.mode == "lockstep":
            _run_lockstep(
                source, config, params, store, teacher, distilling, timings, result, out_stage, event_log
            )
        else:
            _run_threaded(
                source, config, params, store, teacher, distilling, timings, result, out_stage, event_log
            )
    finally:
        event_log.close()
        if sink is not None:
            sink.close()
    return result


def _run_lockstep(
    source, config, params, store, teacher, distilling, timings, result, out_stage, event_log
) -> None:
    hooks = (
        OnlineStudentHooks(
            params, store, teacher, config.scheduler, background_weight=config.background_weight
        )
        if distilling
        else None
    )
    state = SchedulerState.fresh(config.scheduler)
    working_w = params.config.input_width
    working_h = params.config.input_height
    frames = iter(_Paced(source, None, timings))
    while True:
        try:
            frame = next(frames)
        except StopIteration:
            break
        except Exception as exc:  # source failure: terminate cleanly, keep timings
            result.source_error = f"{type(exc).__name__}: {exc}"
            break
        if hooks is not None and not config.freeze_distillation:
            event = step(state, frame, hooks, config.scheduler)
            if event.action is FrameAction.TRAIN_STEP:
                hooks.publish()
            result.events.append(event)
            event_log.write(event)
        t0 = time.monotonic()
        tensor = _preprocess(frame, working_w, working_h)
        timings.record("preprocess", (time.monotonic() - t0) * 1000.0)
        t0 = time.monotonic()
        snapshot = store.latest()
        pred = predict(snapshot, tensor)
        timings.record("inference", (time.monotonic() - t0) * 1000.0)
        out_stage.handle(frame, pred.matte, pred.params_version)


def _run_threaded(
    source, config, params, store, teacher, distilling, timings, result, out_stage, event_log
) -> None:
    cap = config.queue_capacity
    q_pre: DropOldestQueue = DropOldestQueue(cap)
    q_inf: DropOldestQueue = DropOldestQueue(cap)
    q_out: DropOldestQueue = DropOldestQueue(cap)
    mailbox = LatestMailbox()
    working_w = params.config.input_width
    working_h = params.config.input_height
    errors: list[BaseException] = []

    def source_thread() -> None:
        try:
            for frame in _Paced(source, config.source_fps, timings):
                q_pre.put(frame)
                if distilling:
                    mailbox.put(frame)
        except Exception as exc:
            result.source_error = f"{type(exc).__name__}: {exc}"
        finally:
            q_pre.close()
            mailbox.close()

    def preprocess_thread() -> None:
        try:
            for frame in q_pre:
                t0 = time.monotonic()
                tensor = _preprocess(frame, working_w, working_h)
                timings.record("preprocess", (time.monotonic() - t0) * 1000.0)
                q_inf.put((frame, tensor))
        except BaseException as exc:
            errors.append(exc)
        finally:
            q_inf.close()

    def inference_thread() -> None:
        try:
            for frame, tensor in q_inf:
                t0 = time.monotonic()
                pred = predict(store.latest(), tensor)
                timings.record("inference", (time.monotonic() - t0) * 1000.0)
                q_out.put((frame, pred))
        except BaseException as exc:
            errors.append(exc)
        finally:
            q_out.close()

    def output_thread() -> None:
        try:
            for frame, pred in q_out:
                out_stage.handle(frame, pred.matte, pred.params_version)
        except BaseException as exc:
            errors.append(exc)

    def distill_thread() -> None:
        if not distilling:
            return
        if config.freeze_distillation:
            # suspended distillation context: consume nothing, hold no locks
            while not frozen_stop.wait(timeout=0.05):
                pass
            return
        try:
            hooks = OnlineStudentHooks(
                params, store, teacher, config.scheduler, background_weight=config.background_weight
            )
            for event in run_distillation_loop(mailbox, config.scheduler, hooks):
                result.events.append(event)
                event_log.write(event)
        except BaseException as exc:
            errors.append(exc)

    frozen_stop = threading.Event()
    threads = [
        threading.Thread(target=source_thread, name="jitm-source"),
        threading.Thread(target=preprocess_thread, name="jitm-preprocess"),
        threading.Thread(target=inference_thread, name="jitm-inference"),
        threading.Thread(target=output_thread, name="jitm-output"),
        threading.Thread(target=distill_thread, name="jitm-distill", daemon=True),
    ]
    for t in threads:
        t.start()
    for t in threads[:4]:
        t.join()
    frozen_stop.set()
    threads[4].join(timeout=5.0)
    result.dropped = q_pre.dropped + q_inf.dropped + q_out.dropped
    if errors:
        raise errors[0]
