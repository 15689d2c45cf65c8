"""Deterministic synthetic egocentric-QA benchmark generator.

An episode is an ordered list of (verb, object) events. Each event owns a
fixed pseudo-random square glyph drawn fully inside the center-quarter
rectangle of its frames; distractor patches from a small shared pool land
only in the border ring outside the lower-middle-3/8 region, so with zero
noise the interaction signal lives exactly where the video counterfactual
regions expect it. Questions are template-instantiated with answers
recomputable from the event list.

Everything derives from (WorldSpec, master seed) through per-episode seed
sequences, so parallel and serial generation agree byte-for-byte.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .errors import ConfigError, FormatError, InputError

# Salts keep the independent rng streams (glyph table, distractor pool,
# rendering, episode sampling, QA sampling) from colliding.
_GLYPH_SALT = 0x67C1
_DISTRACTOR_SALT = 0xD15C
_RENDER_SALT = 0x4E4D
_EPISODE_SALT = 0xE901
_QA_SALT = 0x9A01

_DISTRACTOR_POOL = 4
_DISTRACTOR_SIZE = 8

PAD_TOKEN = "<pad>"
FORMAT_VERSION = 1

CATEGORIES = ("after", "before", "first", "last", "binary")
OPEN_CATEGORIES = ("after", "before", "first", "last")


@dataclass
class WorldSpec:
    verbs: tuple[str, ...] = ("open", "close", "take", "put", "pour")
    objects: tuple[str, ...] = ("milk", "microwave", "cup", "bowl")
    h: int = 64
    w: int = 64
    c: int = 1
    glyph_size: int = 24
    noise_level: float = 0.05
    n_frames: int = 8
    max_distractors: int = 2

    def __post_init__(self) -> None:
        if not self.verbs or not self.objects:
            raise ConfigError("world needs at least one verb and one object")
        if self.max_distractors < 0:
            raise ConfigError("max_distractors must be >= 0")
        if self.glyph_size > min(self.h, self.w) // 2:
            raise ConfigError(
                f"glyph_size {self.glyph_size} exceeds min(H, W)/2 = {min(self.h, self.w) // 2}"
            )
        if not (0.0 <= self.noise_level < 1.0):
            raise ConfigError(f"noise_level must be in [0, 1), got {self.noise_level}")

    @property
    def pairs(self) -> list[tuple[str, str]]:
        return [(v, o) for v in self.verbs for o in self.objects]

    @property
    def answer_set(self) -> list[str]:
        return [f"{v} {o}" for v, o in self.pairs] + ["yes", "no"]

    def answer_index(self, answer: str) -> int:
        return self.answer_set.index(answer)


@dataclass
class Episode:
    events: list[tuple[str, str]]
    seed: int

    def __post_init__(self) -> None:
        if len(self.events) < 2:
            raise InputError(f"episode needs at least 2 events, got {len(self.events)}")
        for a, b in zip(self.events, self.events[1:]):
            if a == b:
                raise InputError(f"adjacent duplicate event {a} in episode")


@dataclass
class QARecord:
    question_tokens: list[str]
    answer_label: int
    category: str
    video_id: str


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def generate_episode(world: WorldSpec, k: int, rng: np.random.Generator, seed: int = 0) -> Episode:
    """Uniform (verb, object) draws with immediate repeats rejected."""
    if k < 2:
        raise InputError(f"episode length must be >= 2, got {k}")
    pairs = world.pairs
    events: list[tuple[str, str]] = []
    while len(events) < k:
        pick = pairs[int(rng.integers(len(pairs)))]
        if events and pick == events[-1]:
            continue
        events.append(pick)
    return Episode(events=events, seed=seed)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def event_glyph(world: WorldSpec, verb: str, obj: str) -> np.ndarray:
    """Fixed binary pattern identifying one (verb, object) pair."""
    vi, oi = world.verbs.index(verb), world.objects.index(obj)
    rng = _rng(_GLYPH_SALT, vi, oi)
    return (rng.random((world.glyph_size, world.glyph_size)) < 0.5).astype(np.float64)


def _distractor_glyph(pool_index: int) -> np.ndarray:
    rng = _rng(_DISTRACTOR_SALT, pool_index)
    return (rng.random((_DISTRACTOR_SIZE, _DISTRACTOR_SIZE)) < 0.5).astype(np.float64)


def _distractor_position(world: WorldSpec, rng: np.random.Generator) -> tuple[int, int]:
    """Top-left corner such that the patch stays outside the f_v3 region
    (rows [H/4, H) x cols [W/4, 3W/4))."""
    h, w, s = world.h, world.w, _DISTRACTOR_SIZE
    zones = [
        (0, h // 4 - s, 0, w - s),              # strip above the region
        (h // 4, h - s, 0, w // 4 - s),          # left ring
        (h // 4, h - s, 3 * w // 4, w - s),      # right ring
    ]
    zones = [(r0, r1, c0, c1) for r0, r1, c0, c1 in zones if r1 >= r0 and c1 >= c0]
    r0, r1, c0, c1 = zones[int(rng.integers(len(zones)))]
    return int(rng.integers(r0, r1 + 1)), int(rng.integers(c0, c1 + 1))


def render_episode(ep: Episode, world: WorldSpec) -> np.ndarray:
    """(N, C, H, W) frames in [0, 1]; frame i shows event floor(i*K/N)."""
    n, c, h, w = world.n_frames, world.c, world.h, world.w
    k = len(ep.events)
    if n < k:
        raise ConfigError(f"{n} frames cannot cover {k} events")
    gs = world.glyph_size
    # The event glyph must fit strictly inside the center-quarter rectangle.
    if gs > h // 2 or gs > w // 2:
        raise ConfigError(f"glyph {gs} does not fit the {h // 2}x{w // 2} center region")
    rng = _rng(ep.seed, _RENDER_SALT)
    frames = np.zeros((n, c, h, w), dtype=np.float64)
    for i in range(n):
        verb, obj = ep.events[i * k // n]
        glyph = event_glyph(world, verb, obj)
        r = int(rng.integers(h // 4, 3 * h // 4 - gs + 1))
        col = int(rng.integers(w // 4, 3 * w // 4 - gs + 1))
        frames[i, :, r : r + gs, col : col + gs] = glyph
        for _ in range(int(rng.integers(0, world.max_distractors + 1))):
            patch = _distractor_glyph(int(rng.integers(_DISTRACTOR_POOL)))
            pr, pc = _distractor_position(world, rng)
            frames[i, :, pr : pr + _DISTRACTOR_SIZE, pc : pc + _DISTRACTOR_SIZE] = patch
    if world.noise_level > 0.0:
        frames += rng.uniform(0.0, world.noise_level, size=frames.shape)
        np.clip(frames, 0.0, 1.0, out=frames)
    return frames


# ---------------------------------------------------------------------------
# Question generation
# ---------------------------------------------------------------------------


def _event_phrase(event: tuple[str, str]) -> list[str]:
    return [event[0], "the", event[1]]


def _unique_positions(events: list[tuple[str, str]]) -> list[int]:
    return [i for i, e in enumerate(events) if events.count(e) == 1]


def generate_qa(
    ep: Episode,
    world: WorldSpec,
    rng: np.random.Generator,
    video_id: str,
    categories=CATEGORIES,
) -> list[QARecord]:
    """Instantiate question templates against one episode.

    after/before questions anchor only on events that occur exactly once,
    so the answer is recomputable from the event list without ambiguity.
    """
    events = ep.events
    k = len(events)
    unique = _unique_positions(events)
    out: list[QARecord] = []
    for cat in categories:
        if cat == "after":
            anchors = [i for i in unique if i < k - 1]
            if not anchors:
                continue
            i = anchors[int(rng.integers(len(anchors)))]
            toks = "what did the person do after".split() + _event_phrase(events[i])
            answer = " ".join(events[i + 1])
        elif cat == "before":
            anchors = [i for i in unique if i > 0]
            if not anchors:
                continue
            i = anchors[int(rng.integers(len(anchors)))]
            toks = "what did the person do before".split() + _event_phrase(events[i])
            answer = " ".join(events[i - 1])
        elif cat == "first":
            toks = "what was the first action".split()
            answer = " ".join(events[0])
        elif cat == "last":
            toks = "what was the last action".split()
            answer = " ".join(events[-1])
        elif cat == "binary":
            absent = [p for p in world.pairs if p not in events]
            if absent and rng.random() < 0.5:
                event = absent[int(rng.integers(len(absent)))]
                answer = "no"
            else:
                event = events[int(rng.integers(k))]
                answer = "yes"
            toks = "did the person".split() + _event_phrase(event)
        else:
            raise ConfigError(f"unknown question category {cat!r}")
        out.append(
            QARecord(
                question_tokens=toks,
                answer_label=world.answer_index(answer),
                category=cat,
                video_id=video_id,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Dataset assembly and IO
# ---------------------------------------------------------------------------

_TEMPLATE_TOKENS = (
    "what did the person do after before first last was action yes no "
    "the a an"
).split()


def build_vocab(world: WorldSpec, extra_tokens=()) -> list[str]:
    """Pad token first, then every token the corpus or its augmentations
    can produce, sorted for stability."""
    from .textcf import MASK_TOKEN  # local import to avoid a cycle

    toks = set(_TEMPLATE_TOKENS) | set(world.verbs) | set(world.objects) | set(extra_tokens)
    toks.add(MASK_TOKEN)
    return [PAD_TOKEN] + sorted(toks)


@dataclass
class Dataset:
    meta: dict
    records: list[QARecord]
    frames: dict[str, np.ndarray]

    @property
    def world(self) -> WorldSpec:
        return WorldSpec(
            **{**self.meta["world"],
               "verbs": tuple(self.meta["world"]["verbs"]),
               "objects": tuple(self.meta["world"]["objects"])}
        )

    @property
    def answer_set(self) -> list[str]:
        return self.meta["answer_set"]

    @property
    def vocab(self) -> list[str]:
        return self.meta["vocab"]


def _split_salt(split: str) -> int:
    return {"train": 0, "test": 1}.get(split, zlib.crc32(split.encode()))


def build_split(
    world: WorldSpec,
    n_records: int,
    seed: int,
    split: str,
    extra_tokens=(),
    k_choices=(3, 4, 5),
) -> Dataset:
    """Episodes are minted until the split holds ``n_records`` QA records.

    One after/before/(first|last)/binary question per episode; first and
    last alternate by episode index.
    """
    salt = _split_salt(split)
    records: list[QARecord] = []
    frames: dict[str, np.ndarray] = {}
    ep_index = 0
    while len(records) < n_records:
        ep_seed = int(_rng(seed, salt, _EPISODE_SALT, ep_index).integers(2**63))
        rng = _rng(seed, salt, _EPISODE_SALT, ep_index, 1)
        k = int(k_choices[int(rng.integers(len(k_choices)))])
        ep = generate_episode(world, k, rng, seed=ep_seed)
        video_id = f"{split}-ep{ep_index:06d}"
        frames[video_id] = render_episode(ep, world)
        cats = ("after", "before", "first" if ep_index % 2 == 0 else "last", "binary")
        qa_rng = _rng(seed, salt, _QA_SALT, ep_index)
        records.extend(generate_qa(ep, world, qa_rng, video_id, categories=cats))
        ep_index += 1
    records = records[:n_records]
    used = {r.video_id for r in records}
    frames = {vid: arr for vid, arr in frames.items() if vid in used}
    meta = {
        "format_version": FORMAT_VERSION,
        "split": split,
        "seed": seed,
        "world": asdict(world),
        "answer_set": world.answer_set,
        "vocab": build_vocab(world, extra_tokens),
        "n_records": n_records,
    }
    return Dataset(meta=meta, records=records, frames=frames)


def write_dataset(ds: Dataset, out_dir: str | Path) -> None:
    """meta.json + <split>.jsonl + <split>_frames.nkt under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = ds.meta["split"]
    meta_path = out_dir / "meta.json"
    if meta_path.exists():
        existing = json.loads(meta_path.read_text())
        for key in ("world", "answer_set", "vocab"):
            # canonical JSON so tuple/list representation differences don't matter
            if json.dumps(existing.get(key), sort_keys=True) != json.dumps(ds.meta[key], sort_keys=True):
                raise ConfigError(f"dataset dir {out_dir} holds an incompatible {key}")
        existing.setdefault("splits", {})[split] = ds.meta["n_records"]
        meta = existing
    else:
        meta = {k: v for k, v in ds.meta.items() if k not in ("split", "n_records")}
        meta["splits"] = {split: ds.meta["n_records"]}
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    with open(out_dir / f"{split}.jsonl", "w") as fh:
        for rec in ds.records:
            fh.write(
                json.dumps(
                    {
                        "video_id": rec.video_id,
                        "question_tokens": rec.question_tokens,
                        "answer_label": rec.answer_label,
                        "category": rec.category,
                        "frames_ref": f"{split}_frames.nkt",
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    checkpoint.save_tensors(out_dir / f"{split}_frames.nkt", ds.frames, meta={"split": split})


def read_dataset(dir_path: str | Path, split: str) -> Dataset:
    dir_path = Path(dir_path)
    meta_path = dir_path / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"missing dataset meta: {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{meta_path}: format version {meta.get('format_version')!r}")
    jsonl = dir_path / f"{split}.jsonl"
    if not jsonl.exists():
        raise FormatError(f"missing dataset split file: {jsonl}")
    records: list[QARecord] = []
    frames_refs: set[str] = set()
    for lineno, line in enumerate(jsonl.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            records.append(
                QARecord(
                    question_tokens=list(rec["question_tokens"]),
                    answer_label=int(rec["answer_label"]),
                    category=rec["category"],
                    video_id=rec["video_id"],
                )
            )
            frames_refs.add(rec["frames_ref"])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"{jsonl}:{lineno}: bad record: {exc}") from exc
    frames: dict[str, np.ndarray] = {}
    for ref in sorted(frames_refs):
        blob_path = dir_path / ref
        if not blob_path.exists():
            raise FormatError(f"missing frames blob: {blob_path}")
        tensors, _ = checkpoint.load_tensors(blob_path)
        frames.update(tensors)
    meta = dict(meta)
    meta["split"] = split
    return Dataset(meta=meta, records=records, frames=frames)
