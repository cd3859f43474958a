"""Online-distillation scheduling: adaptive teacher stride with a training budget.

Exactly one operation happens per consumed frame. On every delta-th frame
the teacher runs, refilling the training budget and rescoring the student
against the fresh label. Between teacher frames, a below-threshold score
spends budget on single train steps; an exhausted budget halves the
stride, and an above-threshold score with budget left doubles the stride
and zeroes the budget. When the score is above threshold with no budget,
nothing happens. Teacher failures skip the sample and leave everything
but the frame counter untouched.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Iterator, Protocol

from .imaging import AlphaMatte, Frame, resize_bilinear_rgb, threshold
from .metrics import iou_acc
from .student import SnapshotStore, StudentParams, frame_to_tensor, predict, train_step
from .teacher import TeacherError, TeacherLabel


class FrameAction(Enum):
    TEACHER_INFER = "teacher_infer"
    TRAIN_STEP = "train_step"
    HALVE_DELTA = "halve_delta"
    DOUBLE_DELTA = "double_delta"
    IDLE = "idle"


@dataclass(frozen=True)
class SchedulerConfig:
    u_max: int = 8
    delta_min: int = 8
    delta_max: int = 64
    a_thresh: float = 0.9
    lr: float = 0.2
    area_threshold: float = 0.05
    label_mode: str = "stale-label"  # or "cached-pair"

    def __post_init__(self) -> None:
        if self.delta_min < 1 or self.delta_min > self.delta_max:
            raise ValueError(f"need 1 <= delta_min <= delta_max, got {self.delta_min}..{self.delta_max}")
        ratio = self.delta_max // self.delta_min
        if self.delta_min * ratio != self.delta_max or ratio & (ratio - 1):
            raise ValueError("delta_max must be delta_min times a power of two")
        if self.u_max < 1:
            raise ValueError(f"u_max must be >= 1, got {self.u_max}")
        if not 0.0 < self.a_thresh <= 1.0:
            raise ValueError(f"a_thresh must be in (0, 1], got {self.a_thresh}")
        if self.label_mode not in ("stale-label", "cached-pair"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")


@dataclass
class SchedulerState:
    """Mutable per-stream machine state; one instance per distillation run."""

    delta: int
    u: int = 0
    a_curr: float = 0.0
    cached_label: TeacherLabel | None = None
    cached_teacher_frame: Frame | None = None
    t: int = 0
    last_seq: int = -1

    @classmethod
    def fresh(cls, config: SchedulerConfig) -> "SchedulerState":
        return cls(delta=config.delta_min)


@dataclass(frozen=True)
class SchedulerEvent:
    """Outcome of one consumed frame: action plus post-step state."""

    t: int
    action: FrameAction
    delta: int
    u: int
    a_curr: float
    seq: int
    teacher_ms: float | None = None
    train_ms: float | None = None
    loss: float | None = None
    teacher_error: str | None = None

    def to_json_dict(self) -> dict:
        doc = {
            "t": self.t,
            "action": self.action.value,
            "delta": self.delta,
            "u": self.u,
            "a_curr": self.a_curr,
        }
        if self.teacher_ms is not None:
            doc["teacher_ms"] = self.teacher_ms
        if self.train_ms is not None:
            doc["train_ms"] = self.train_ms
        return doc


class DistillationHooks(Protocol):
    """What the scheduler needs from the student and teacher."""

    def run_teacher(self, frame: Frame) -> TeacherLabel: ...

    def predict(self, frame: Frame) -> AlphaMatte: ...

    def train(self, frame: Frame, label: TeacherLabel) -> float: ...

    def score(self, pred: AlphaMatte, label: TeacherLabel) -> float: ...

    def publish(self) -> None: ...


def step(
    state: SchedulerState,
    frame: Frame,
    hooks: DistillationHooks,
    config: SchedulerConfig,
) -> SchedulerEvent:
    """Consume one frame, perform its single operation, advance the state."""
    if frame.seq <= state.last_seq:
        raise ValueError(f"frame seq {frame.seq} not increasing past {state.last_seq}")
    state.last_seq = frame.seq
    t = state.t
    update = state.a_curr < config.a_thresh
    teacher_ms = train_ms = loss = None
    teacher_error = None

    if t % state.delta == 0:
        started = time.monotonic()
        try:
            label = hooks.run_teacher(frame)
        except TeacherError as exc:
            # skip the sample: only the frame counter moves
            action = FrameAction.IDLE
            teacher_error = f"{type(exc).__name__}: {exc}"
        else:
            teacher_ms = (time.monotonic() - started) * 1000.0
            state.cached_label = label
            state.cached_teacher_frame = frame
            state.u = config.u_max
            state.a_curr = hooks.score(hooks.predict(frame), label)
            action = FrameAction.TEACHER_INFER
    elif update and state.u > 0:
        train_frame = frame if config.label_mode == "stale-label" else state.cached_teacher_frame
        assert state.cached_label is not None and train_frame is not None
        started = time.monotonic()
        loss = hooks.train(train_frame, state.cached_label)
        train_ms = (time.monotonic() - started) * 1000.0
        state.a_curr = hooks.score(hooks.predict(frame), state.cached_label)
        state.u -= 1
        action = FrameAction.TRAIN_STEP
    elif update:
        state.delta = max(config.delta_min, state.delta // 2)
        action = FrameAction.HALVE_DELTA
    elif state.u > 0:
        state.delta = min(config.delta_max, 2 * state.delta)
        state.u = 0
        action = FrameAction.DOUBLE_DELTA
    else:
        action = FrameAction.IDLE

    state.t += 1
    return SchedulerEvent(
        t=t,
        action=action,
        delta=state.delta,
        u=state.u,
        a_curr=state.a_curr,
        seq=frame.seq,
        teacher_ms=teacher_ms,
        train_ms=train_ms,
        loss=loss,
        teacher_error=teacher_error,
    )


def run_distillation_loop(
    frames: Iterable[Frame],
    config: SchedulerConfig,
    hooks: DistillationHooks,
    state: SchedulerState | None = None,
) -> Iterator[SchedulerEvent]:
    """Apply step per consumed frame, publishing a snapshot after each train."""
    state = state if state is not None else SchedulerState.fresh(config)
    for frame in frames:
        event = step(state, frame, hooks, config)
        if event.action is FrameAction.TRAIN_STEP:
            hooks.publish()
        yield event


class OnlineStudentHooks:
    """Production hooks: preprocess, private-parameter training, publication.

    The private parameter set lives here; predictions and scores use it
    directly (the loop publishes right after every train step, so the
    published snapshot agrees with the private set whenever a teacher
    frame scores it).
    """

    def __init__(
        self,
        params: StudentParams,
        store: SnapshotStore,
        teacher: Callable[[Frame], TeacherLabel],
        config: SchedulerConfig,
        background_weight: float = 1.0,
    ):
        self.params = params
        self.store = store
        self.teacher = teacher
        self.config = config
        self.background_weight = background_weight
        self._tensor_cache: tuple[int, object] | None = None
        self.train_steps = 0

    def _tensor(self, frame: Frame):
        if self._tensor_cache is not None and self._tensor_cache[0] == frame.seq:
            return self._tensor_cache[1]
        cfg = self.params.config
        if (frame.width, frame.height) != (cfg.input_width, cfg.input_height):
            frame = resize_bilinear_rgb(frame, cfg.input_width, cfg.input_height)
        tensor = frame_to_tensor(frame)
        self._tensor_cache = (frame.seq, tensor)
        return tensor

    def run_teacher(self, frame: Frame) -> TeacherLabel:
        return self.teacher(frame)

    def predict(self, frame: Frame) -> AlphaMatte:
        return predict(self.params, self._tensor(frame)).matte

    def train(self, frame: Frame, label: TeacherLabel) -> float:
        self.params, loss = train_step(
            self.params,
            self._tensor(frame),
            label.matte,
            lr=self.config.lr,
            background_weight=self.background_weight,
        )
        self.train_steps += 1
        return loss

    def score(self, pred: AlphaMatte, label: TeacherLabel) -> float:
        report = iou_acc(
            threshold(pred, 0.5),
            threshold(label.matte, 0.5),
            area_threshold=self.config.area_threshold,
        )
        return report.iou_acc

    def publish(self) -> None:
        self.params = self.store.publish(self.params)
