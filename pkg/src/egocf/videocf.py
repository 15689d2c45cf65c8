"""Core interaction mining: region selection plus retain/mask pairs.

A video is an (N, C, H, W) float64 array in [0, 1]. Region variants:

    f_v1  center quarter          rows [H/4, 3H/4) x cols [W/4, 3W/4)
    f_v2  lower-middle quarter    rows [H/2, H)    x cols [W/4, 3W/4)
    f_v3  lower-middle 3/8        rows [H/4, H)    x cols [W/4, 3W/4)
    f_v4  per-frame union of externally supplied bounding boxes

Positives retain the region (everything else filled); negatives mask it.
With fill 0 the two halves sum back to the original bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError

VIDEO_VARIANTS = ("f_v1", "f_v2", "f_v3", "f_v4")

Rect = tuple[int, int, int, int]  # (row0, row1, col0, col1), half-open


@dataclass
class RegionSpec:
    variant: str
    rects: list[list[Rect]]  # one rectangle list per frame


@dataclass
class BBoxRecord:
    frame_index: int
    boxes: list[Rect] = field(default_factory=list)


def _fixed_rect(variant: str, h: int, w: int) -> Rect:
    if variant == "f_v1":
        return (h // 4, 3 * h // 4, w // 4, 3 * w // 4)
    if variant == "f_v2":
        return (h // 2, h, w // 4, 3 * w // 4)
    if variant == "f_v3":
        return (h // 4, h, w // 4, 3 * w // 4)
    raise ConfigError(f"unknown video variant {variant!r}, expected one of {VIDEO_VARIANTS}")


def _check_rect(rect: Rect, h: int, w: int) -> None:
    r0, r1, c0, c1 = rect
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise DimensionError(f"rectangle {rect} outside frame {h}x{w}")


def select_region(
    variant: str,
    h: int,
    w: int,
    n_frames: int,
    bboxes: list[BBoxRecord] | None = None,
) -> RegionSpec:
    """Region geometry for one video. f_v1-f_v3 replicate a fixed rectangle
    to every frame; f_v4 takes the union of each frame's supplied boxes."""
    if variant == "f_v4":
        if bboxes is None:
            raise ConfigError("variant f_v4 requires bounding boxes")
        by_frame: dict[int, list[Rect]] = {}
        for rec in bboxes:
            for box in rec.boxes:
                _check_rect(tuple(box), h, w)
            by_frame.setdefault(rec.frame_index, []).extend(tuple(b) for b in rec.boxes)
        return RegionSpec(variant=variant, rects=[by_frame.get(i, []) for i in range(n_frames)])
    rect = _fixed_rect(variant, h, w)
    return RegionSpec(variant=variant, rects=[[rect]] * n_frames)


def region_mask(region: RegionSpec, h: int, w: int) -> np.ndarray:
    """(N, H, W) boolean array, True inside the region."""
    out = np.zeros((len(region.rects), h, w), dtype=bool)
    for f, rects in enumerate(region.rects):
        for r0, r1, c0, c1 in rects:
            out[f, r0:r1, c0:c1] = True
    return out


def _check_video(v: np.ndarray, region: RegionSpec) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 4:
        raise DimensionError(f"video must be (N, C, H, W), got shape {v.shape}")
    n, _, h, w = v.shape
    if len(region.rects) != n:
        raise DimensionError(f"region has {len(region.rects)} frames, video has {n}")
    for rects in region.rects:
        for rect in rects:
            _check_rect(rect, h, w)
    return v


def retain(v: np.ndarray, region: RegionSpec, fill: float = 0.0) -> np.ndarray:
    """Copy pixels inside the region; set everything else to ``fill``."""
    v = _check_video(v, region)
    out = np.full_like(v, fill)
    for f, rects in enumerate(region.rects):
        for r0, r1, c0, c1 in rects:
            out[f, :, r0:r1, c0:c1] = v[f, :, r0:r1, c0:c1]
    return out


def mask(v: np.ndarray, region: RegionSpec, fill: float = 0.0) -> np.ndarray:
    """Complement of ``retain``: fill inside the region, copy outside."""
    v = _check_video(v, region)
    out = v.copy()
    for f, rects in enumerate(region.rects):
        for r0, r1, c0, c1 in rects:
            out[f, :, r0:r1, c0:c1] = fill
    return out


def make_video_pair(
    v: np.ndarray,
    variant: str,
    bboxes: list[BBoxRecord] | None = None,
    fill: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """(positive, negative) = (retain, mask) under one shared RegionSpec."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 4:
        raise DimensionError(f"video must be (N, C, H, W), got shape {v.shape}")
    n, _, h, w = v.shape
    region = select_region(variant, h, w, n, bboxes=bboxes)
    return retain(v, region, fill=fill), mask(v, region, fill=fill)


# ---------------------------------------------------------------------------
# Bounding-box ingestion (detector outputs arrive as JSONL, never computed here)
# ---------------------------------------------------------------------------


def load_bboxes(path: str | Path) -> dict[str, list[BBoxRecord]]:
    """Read ``{video_id, frame_index, boxes: [[r0,r1,c0,c1], ...]}`` JSONL."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"bbox file not found: {path}")
    out: dict[str, list[BBoxRecord]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
        try:
            vid = rec["video_id"]
            frame = int(rec["frame_index"])
            boxes = [tuple(int(x) for x in box) for box in rec["boxes"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad bbox record: {exc}") from exc
        out.setdefault(vid, []).append(BBoxRecord(frame_index=frame, boxes=boxes))
    return out
