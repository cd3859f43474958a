"""Synthetic video-call clips with pixel-exact ground truth.

Each clip shows one flat-colored subject (ellipse or rounded rectangle)
drifting over a static background, with optional scene changes at fixed
frames: background swaps, global lighting shifts, and the subject leaving
or entering. Clip difficulty is a pure function of the scene-change
count: 0 is easy, 1 medium, 2+ hard.

Subject masks are rasterized by a center-of-pixel point-in-shape test,
never antialiased, so the stored masks are exact. All rendering is a
deterministic function of the spec (any randomness is resolved into spec
fields or derived from seeds stored in the spec).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .imaging import (
    AlphaMatte,
    Frame,
    resize_bilinear_alpha,
    resize_bilinear_rgb,
    write_pgm,
    write_ppm,
)

# Pretraining palette: saturated warm subjects over muted cool backgrounds.
# Hard clips deliberately leave this regime (dim lighting, warm backgrounds)
# so a frozen pretrained model degrades while the online one adapts.
SUBJECT_COLORS = [
    (220, 60, 50),
    (235, 120, 40),
    (225, 180, 45),
    (205, 60, 140),
    (240, 90, 90),
    (210, 140, 60),
    (190, 70, 40),
    (230, 150, 120),
]
COOL_COLORS = [
    (25, 35, 60),
    (40, 60, 90),
    (30, 70, 70),
    (60, 65, 75),
    (20, 45, 35),
    (70, 80, 100),
    (45, 50, 55),
    (35, 55, 85),
    (55, 75, 65),
]
# Hostile backgrounds for hard clips: warm tans a frozen warm-subject
# detector confuses with the subject, kept >= ~90 RGB distance from the
# strong reds below so an adapting student can still separate them.
WARM_BG_PAIRS = [
    ((185, 140, 85), (165, 115, 70)),
    ((200, 155, 95), (175, 125, 80)),
    ((170, 125, 75), (190, 145, 90)),
]
STRONG_RED_SUBJECTS = [(220, 60, 50), (235, 85, 70), (205, 55, 60)]


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


def classify_difficulty(scene_change_count: int) -> Difficulty:
    if scene_change_count == 0:
        return Difficulty.EASY
    if scene_change_count == 1:
        return Difficulty.MEDIUM
    return Difficulty.HARD


@dataclass(frozen=True)
class SubjectSpec:
    """One moving subject; positions and radii are fractions of frame dims."""

    shape: str  # "ellipse" | "rounded-rect"
    color: tuple[int, int, int]
    rx: float  # half-width as a fraction of frame height
    ry: float  # half-height as a fraction of frame height
    cx0: float = 0.5  # base center, fraction of width
    cy0: float = 0.5  # fraction of height
    amp_x: float = 0.1
    amp_y: float = 0.04
    period: float = 120.0  # frames per oscillation
    phase_x: float = 0.0
    phase_y: float = 1.1
    corner_radius: float = 0.35  # rounded-rect only, fraction of min(rx, ry)
    initially_visible: bool = True
    absent: tuple[tuple[int, int], ...] = ()  # explicit [start, end) gaps


@dataclass(frozen=True)
class BackgroundSpec:
    kind: str  # "flat" | "gradient" | "noise"
    color_a: tuple[int, int, int]
    color_b: tuple[int, int, int] = (0, 0, 0)
    axis: str = "vertical"  # gradient direction
    cells: int = 5  # noise grid resolution
    seed: int = 0


@dataclass(frozen=True)
class SceneChange:
    """A discrete scene change taking effect at the given frame index."""

    frame: int
    kind: str  # background-swap | lighting-shift | subject-enter | subject-exit
    background: BackgroundSpec | None = None  # for background-swap
    gain: float | None = None  # for lighting-shift, replaces the current gain


@dataclass(frozen=True)
class SyntheticSceneSpec:
    clip_id: str
    duration_frames: int
    width: int
    height: int
    subject: SubjectSpec
    background: BackgroundSpec
    scene_changes: tuple[SceneChange, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scene_changes", tuple(self.scene_changes))
        last = -1
        for change in self.scene_changes:
            if not 0 <= change.frame < self.duration_frames:
                raise ValueError(f"scene change at {change.frame} outside clip of {self.duration_frames}")
            if change.frame <= last:
                raise ValueError("scene change frames must be strictly increasing")
            last = change.frame

    @property
    def difficulty(self) -> Difficulty:
        return classify_difficulty(len(self.scene_changes))

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SyntheticSceneSpec":
        subject = dict(doc["subject"])
        subject["color"] = tuple(subject["color"])
        subject["absent"] = tuple(tuple(iv) for iv in subject.get("absent", ()))
        changes = []
        for ch in doc.get("scene_changes", []):
            bg = ch.get("background")
            changes.append(
                SceneChange(
                    frame=ch["frame"],
                    kind=ch["kind"],
                    background=_bg_from_dict(bg) if bg else None,
                    gain=ch.get("gain"),
                )
            )
        return cls(
            clip_id=doc["clip_id"],
            duration_frames=doc["duration_frames"],
            width=doc["width"],
            height=doc["height"],
            subject=SubjectSpec(**subject),
            background=_bg_from_dict(doc["background"]),
            scene_changes=tuple(changes),
            seed=doc.get("seed", 0),
        )


def _bg_from_dict(doc: dict) -> BackgroundSpec:
    doc = dict(doc)
    doc["color_a"] = tuple(doc["color_a"])
    doc["color_b"] = tuple(doc.get("color_b", (0, 0, 0)))
    return BackgroundSpec(**doc)


# --- rasterization -----------------------------------------------------------

def subject_mask(spec: SubjectSpec, width: int, height: int, t: float) -> np.ndarray:
    """Exact boolean mask: center-of-pixel point-in-shape test."""
    cx = (spec.cx0 + spec.amp_x * math.sin(2 * math.pi * t / spec.period + spec.phase_x)) * width
    cy = (spec.cy0 + spec.amp_y * math.sin(2 * math.pi * t / spec.period + spec.phase_y)) * height
    rx = spec.rx * height
    ry = spec.ry * height
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    if spec.shape == "ellipse":
        return (dx / rx) ** 2 + (dy / ry) ** 2 <= 1.0
    if spec.shape == "rounded-rect":
        cr = spec.corner_radius * min(rx, ry)
        ex = np.maximum(np.abs(dx) - (rx - cr), 0.0)
        ey = np.maximum(np.abs(dy) - (ry - cr), 0.0)
        return ex**2 + ey**2 <= cr**2
    raise ValueError(f"unknown subject shape {spec.shape!r}")


def render_background(spec: BackgroundSpec, width: int, height: int) -> np.ndarray:
    a = np.array(spec.color_a, dtype=np.float64)
    b = np.array(spec.color_b, dtype=np.float64)
    if spec.kind == "flat":
        img = np.tile(a, (height, width, 1))
    elif spec.kind == "gradient":
        n = height if spec.axis == "vertical" else width
        ramp = np.linspace(0.0, 1.0, n)[:, None]
        line = a[None, :] * (1 - ramp) + b[None, :] * ramp
        if spec.axis == "vertical":
            img = np.repeat(line[:, None, :], width, axis=1)
        else:
            img = np.repeat(line[None, :, :], height, axis=0)
    elif spec.kind == "noise":
        rng = np.random.default_rng(spec.seed)
        u = rng.random((spec.cells, spec.cells, 1))
        grid = a * (1 - u) + b * u
        ys = np.linspace(0, spec.cells - 1, height)
        xs = np.linspace(0, spec.cells - 1, width)
        y0 = np.floor(ys).astype(int)
        x0 = np.floor(xs).astype(int)
        y1 = np.minimum(y0 + 1, spec.cells - 1)
        x1 = np.minimum(x0 + 1, spec.cells - 1)
        wy = (ys - y0)[:, None, None]
        wx = (xs - x0)[None, :, None]
        rows = grid[y0] * (1 - wy) + grid[y1] * wy
        img = rows[:, x0] * (1 - wx) + rows[:, x1] * wx
    else:
        raise ValueError(f"unknown background kind {spec.kind!r}")
    return np.floor(img + 0.5).clip(0, 255).astype(np.uint8)


class ClipRenderer:
    """Deterministic frame/mask renderer for one clip spec."""

    def __init__(self, spec: SyntheticSceneSpec):
        self.spec = spec
        self._bg_cache: dict[int, np.ndarray] = {}

    def _state_at(self, t: int) -> tuple[BackgroundSpec, float, bool]:
        bg = self.spec.background
        gain = 1.0
        visible = self.spec.subject.initially_visible
        for change in self.spec.scene_changes:
            if change.frame > t:
                break
            if change.kind == "background-swap":
                bg = change.background or bg
            elif change.kind == "lighting-shift":
                gain = change.gain if change.gain is not None else gain
            elif change.kind == "subject-exit":
                visible = False
            elif change.kind == "subject-enter":
                visible = True
            else:
                raise ValueError(f"unknown scene change kind {change.kind!r}")
        for start, end in self.spec.subject.absent:
            if start <= t < end:
                visible = False
        return bg, gain, visible

    def _background(self, bg: BackgroundSpec) -> np.ndarray:
        key = hash((bg.kind, bg.color_a, bg.color_b, bg.axis, bg.cells, bg.seed))
        if key not in self._bg_cache:
            self._bg_cache[key] = render_background(bg, self.spec.width, self.spec.height)
        return self._bg_cache[key]

    def render(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Returns (uint8 (h, w, 3) frame, bool (h, w) ground-truth mask)."""
        if not 0 <= t < self.spec.duration_frames:
            raise ValueError(f"frame index {t} outside clip")
        bg_spec, gain, visible = self._state_at(t)
        img = self._background(bg_spec).copy()
        if visible:
            mask = subject_mask(self.spec.subject, self.spec.width, self.spec.height, t)
            img[mask] = self.spec.subject.color
        else:
            mask = np.zeros((self.spec.height, self.spec.width), dtype=bool)
        if gain != 1.0:
            img = np.floor(img.astype(np.float64) * gain + 0.5).clip(0, 255).astype(np.uint8)
        return img, mask

    def frames(self):
        for t in range(self.spec.duration_frames):
            img, _ = self.render(t)
            yield Frame(self.spec.width, self.spec.height, img, seq=t)


# --- suite construction --------------------------------------------------------

def _subject(rng: np.random.Generator, shape: str | None = None) -> SubjectSpec:
    return SubjectSpec(
        shape=shape or ("ellipse" if rng.random() < 0.6 else "rounded-rect"),
        color=SUBJECT_COLORS[rng.integers(len(SUBJECT_COLORS))],
        rx=float(rng.uniform(0.13, 0.18)),
        ry=float(rng.uniform(0.22, 0.30)),
        cx0=float(rng.uniform(0.38, 0.62)),
        cy0=float(rng.uniform(0.45, 0.58)),
        amp_x=float(rng.uniform(0.05, 0.14)),
        amp_y=float(rng.uniform(0.02, 0.05)),
        period=float(rng.uniform(90, 180)),
        phase_x=float(rng.uniform(0, 2 * math.pi)),
        phase_y=float(rng.uniform(0, 2 * math.pi)),
    )


def _cool_background(rng: np.random.Generator) -> BackgroundSpec:
    kind = ("flat", "gradient", "noise")[rng.integers(3)]
    a = COOL_COLORS[rng.integers(len(COOL_COLORS))]
    b = COOL_COLORS[rng.integers(len(COOL_COLORS))]
    return BackgroundSpec(
        kind=kind,
        color_a=a,
        color_b=b,
        axis="vertical" if rng.random() < 0.5 else "horizontal",
        cells=int(rng.integers(4, 7)),
        seed=int(rng.integers(2**31)),
    )


def _warm_background(rng: np.random.Generator, which: int) -> BackgroundSpec:
    a, b = WARM_BG_PAIRS[which % len(WARM_BG_PAIRS)]
    return BackgroundSpec(kind="gradient", color_a=a, color_b=b, axis="vertical", seed=int(rng.integers(2**31)))


def suite_specs(
    seed: int = 7, frames: int = 300, width: int = 320, height: int = 240
) -> list[SyntheticSceneSpec]:
    """The 17-clip benchmark: 7 easy, 6 medium, 4 hard."""
    if frames < 20:
        raise ValueError("suite clips need at least 20 frames to space the scene changes")
    rng = np.random.default_rng(seed)
    specs: list[SyntheticSceneSpec] = []

    for i in range(7):
        specs.append(
            SyntheticSceneSpec(
                clip_id=f"easy_{i:02d}",
                duration_frames=frames,
                width=width,
                height=height,
                subject=_subject(rng),
                background=_cool_background(rng),
                seed=int(rng.integers(2**31)),
            )
        )

    def at(fraction: float) -> int:
        return int(frames * fraction)

    # Medium: exactly one scene change. The warm swap sits mid-clip so an
    # adapting student has room to recover; lighting shifts and subject
    # visibility changes cover the rest of the taxonomy.
    medium_changes = [
        [SceneChange(at(0.5), "background-swap", background=_cool_background(rng))],
        [SceneChange(at(0.45), "background-swap", background=_warm_background(rng, 0))],
        [SceneChange(at(0.5), "lighting-shift", gain=0.45)],
        [SceneChange(at(0.55), "lighting-shift", gain=1.6)],
        [SceneChange(at(0.8), "subject-exit")],
        [SceneChange(at(0.25), "subject-enter")],
    ]
    for i, changes in enumerate(medium_changes):
        visible = changes[0].kind != "subject-enter"
        subject = replace(_subject(rng), initially_visible=visible)
        if i == 1:
            subject = replace(subject, color=STRONG_RED_SUBJECTS[0])
        specs.append(
            SyntheticSceneSpec(
                clip_id=f"medium_{i:02d}",
                duration_frames=frames,
                width=width,
                height=height,
                subject=subject,
                background=_cool_background(rng),
                scene_changes=tuple(changes),
                seed=int(rng.integers(2**31)),
            )
        )

    # Hard: two or more changes, loaded into the first half so the
    # hostile (warm, frozen-confusing) segments dominate the clip.
    hard_changes = [
        [
            SceneChange(at(0.22), "background-swap", background=_warm_background(rng, 0)),
            SceneChange(at(0.55), "background-swap", background=_warm_background(rng, 1)),
        ],
        [
            SceneChange(at(0.3), "subject-exit"),
            SceneChange(at(0.6), "subject-enter"),
        ],
        [
            SceneChange(at(0.2), "background-swap", background=_warm_background(rng, 2)),
            SceneChange(at(0.5), "lighting-shift", gain=1.45),
            SceneChange(at(0.75), "lighting-shift", gain=0.6),
        ],
        [
            SceneChange(at(0.2), "background-swap", background=_warm_background(rng, 1)),
            SceneChange(at(0.55), "subject-exit"),
            SceneChange(at(0.8), "subject-enter"),
        ],
    ]
    for i, changes in enumerate(hard_changes):
        subject = replace(_subject(rng), color=STRONG_RED_SUBJECTS[i % len(STRONG_RED_SUBJECTS)])
        specs.append(
            SyntheticSceneSpec(
                clip_id=f"hard_{i:02d}",
                duration_frames=frames,
                width=width,
                height=height,
                subject=subject,
                background=_cool_background(rng),
                scene_changes=tuple(changes),
                seed=int(rng.integers(2**31)),
            )
        )
    return specs


# --- on-disk generation --------------------------------------------------------

def generate_clip(spec: SyntheticSceneSpec, out_dir: str | Path) -> dict:
    """Write frames/ (PPM) and masks/ (PGM) plus clip.json; returns the entry."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    masks_dir = out_dir / "masks"
    frames_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)
    renderer = ClipRenderer(spec)
    frame_files: list[str] = []
    mask_files: list[str] = []
    for t in range(spec.duration_frames):
        img, mask = renderer.render(t)
        frame_name = f"frames/{t:06d}.ppm"
        mask_name = f"masks/{t:06d}.pgm"
        write_ppm(Frame(spec.width, spec.height, img, seq=t), out_dir / frame_name)
        write_pgm(
            AlphaMatte(spec.width, spec.height, mask.astype(np.float32)), out_dir / mask_name
        )
        frame_files.append(frame_name)
        mask_files.append(mask_name)
    entry = {
        "id": spec.clip_id,
        "difficulty": spec.difficulty.value,
        "frames": spec.duration_frames,
        "width": spec.width,
        "height": spec.height,
        "dir": out_dir.name,
        "frame_files": frame_files,
        "mask_files": mask_files,
        "scene_changes": len(spec.scene_changes),
    }
    (out_dir / "clip.json").write_text(
        json.dumps({"entry": entry, "spec": spec.to_json_dict()}, indent=2)
    )
    return entry


def generate_suite(
    out_dir: str | Path,
    seed: int = 7,
    frames: int = 300,
    width: int = 320,
    height: int = 240,
) -> dict:
    """Generate the full 17-clip suite and its manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for spec in suite_specs(seed=seed, frames=frames, width=width, height=height):
        entries.append(generate_clip(spec, out_dir / spec.clip_id))
    manifest = {
        "version": 1,
        "seed": seed,
        "frames_per_clip": frames,
        "width": width,
        "height": height,
        "clips": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


# --- pretraining corpus -----------------------------------------------------------

def make_pretrain_dataset(
    n: int, working_width: int, working_height: int, seed: int = 0, empty_fraction: float = 0.15
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random shape/mask pairs at working resolution for supervised pretraining.

    Samples are rendered oversize and bilinearly downsampled so their edge
    statistics match the deployment preprocessing. A slice of the corpus
    has no subject at all, teaching the model to output empty mattes on
    pure backgrounds.
    """
    rng = np.random.default_rng(seed)
    render_w = max(working_width, int(round(working_width * 4 / 3)))
    render_h = max(working_height, int(round(working_height * 4 / 3)))
    out: list[tuple[np.ndarray, np.ndarray]] = []
    for _ in range(n):
        bg = render_background(_cool_background(rng), render_w, render_h)
        if rng.random() < empty_fraction:
            img = bg
            mask = np.zeros((render_h, render_w), dtype=bool)
        else:
            subject = _subject(rng)
            mask = subject_mask(subject, render_w, render_h, t=float(rng.uniform(0, subject.period)))
            img = bg.copy()
            img[mask] = subject.color
        frame = resize_bilinear_rgb(
            Frame(render_w, render_h, img), working_width, working_height
        )
        matte = resize_bilinear_alpha(
            AlphaMatte(render_w, render_h, mask.astype(np.float32)), working_width, working_height
        )
        out.append((frame.pixels, matte.values))
    return out
