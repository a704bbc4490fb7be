"""Synthetic labeled datasets, the on-disk file format, and feature import.

A dataset is a collection of clips with per-person feature tracks plus a
train/test split and a class catalog. The synthetic generator builds
formation-style classes on a unit court: each class is a prototype formation
(per-person anchor positions, a smooth per-frame drift path, and a per-role
appearance prototype); clips are the prototype plus seeded Gaussian jitter.
Classes come in left/right mirrored pairs sharing their appearance prototypes,
so mirror confusions exist and selection has something to disambiguate.

File format (version 1): UTF-8 JSON lines. The first line is a header record
{"version": 1, "kind": "dataset", "id", "feature_dim", "class_catalog", ...};
every following line is one clip record {"id", "split", "class", "frames",
"persons", "positions" (T x N x 2), "appearance" (T x N x C)}. Floats
round-trip losslessly through JSON.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import VideoFeatures
from .errors import ConfigError, GroupActError, ParseError, ValidationError
from .finetune import Annotation

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1

FORMATION_NAMES = ("set", "spike", "pass", "winpoint", "serve", "block", "dig", "huddle")


@dataclass
class SyntheticConfig:
    """Generator settings.

    noise_scale jitters positions (court units) and appearances per clip.
    class_appearance_strength scales how much of the appearance is
    class-specific: the bulk of every person's appearance is a shared roster
    vector (same players in every clip), so classes are told apart mostly by
    formation and motion.
    """

    class_count: int = 8
    train_per_class: int = 75
    test_per_class: int = 25
    persons: int = 12
    frames: int = 8
    feature_dim: int = 16
    noise_scale: float = 0.25
    appearance_scale: float = 4.0
    class_appearance_strength: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("class_count", "train_per_class", "test_per_class",
                     "persons", "frames", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.feature_dim % 4 != 0:
            raise ConfigError("feature_dim must be divisible by 4")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")
        if self.class_appearance_strength < 0:
            raise ConfigError("class_appearance_strength must be >= 0")


@dataclass
class Dataset:
    id: str
    feature_dim: int
    videos: list[VideoFeatures]
    split: dict[str, str]  # video id -> "train" | "test"
    class_catalog: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for v in self.videos:
            if v.id in seen:
                raise ValidationError(f"duplicate video id {v.id!r}")
            seen.add(v.id)
            if v.feature_dim != self.feature_dim:
                raise ValidationError(
                    f"video {v.id!r} has C={v.feature_dim}, dataset expects C={self.feature_dim}"
                )
            if self.split.get(v.id) not in ("train", "test"):
                raise ValidationError(f"video {v.id!r} missing a train/test split tag")

    def by_id(self, video_id: str) -> VideoFeatures:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(f"unknown video id {video_id!r}")

    @property
    def index(self) -> dict[str, VideoFeatures]:
        return {v.id: v for v in self.videos}

    def train_videos(self) -> list[VideoFeatures]:
        return [v for v in self.videos if self.split[v.id] == "train"]

    def test_videos(self) -> list[VideoFeatures]:
        return [v for v in self.videos if self.split[v.id] == "test"]

    def labels(self) -> dict[str, str | None]:
        return {v.id: v.class_label for v in self.videos}

    def class_names(self) -> list[str]:
        return [name for name, _ in self.class_catalog]

    def equals(self, other: "Dataset") -> bool:
        if (
            self.id != other.id
            or self.feature_dim != other.feature_dim
            or self.split != other.split
            or self.class_catalog != other.class_catalog
            or len(self.videos) != len(other.videos)
        ):
            return False
        for a, b in zip(self.videos, other.videos):
            if a.id != b.id or a.class_label != b.class_label:
                return False
            if not np.array_equal(a.appearance, b.appearance):
                return False
            if not np.array_equal(a.positions, b.positions):
                return False
        return True


def _class_names(count: int) -> list[str]:
    names = []
    for i in range(count):
        side = "left" if i % 2 == 0 else "right"
        base = (
            FORMATION_NAMES[(i // 2) % len(FORMATION_NAMES)]
            if i // 2 < len(FORMATION_NAMES)
            else f"formation{i // 2}"
        )
        names.append(f"{side}-{base}")
    return names


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Deterministic synthetic dataset of formation-style group activities.

    Mirrored class pairs (left-x, right-x) share per-role appearance
    prototypes and differ only by reflecting anchor positions and drift
    across the court midline, so position information is required to tell
    them apart. noise_scale 0 makes all clips of a class identical.
    """
    rng = np.random.default_rng(cfg.seed)
    names = _class_names(cfg.class_count)
    n_arch = (cfg.class_count + 1) // 2

    # Prototypes, drawn before any per-clip randomness. One appearance roster
    # is shared by every class; archetypes only modulate it weakly. Anchors
    # sit on the left half; mirrored classes reflect them to the right.
    roster = rng.normal(0.0, cfg.appearance_scale, size=(cfg.persons, cfg.feature_dim))
    arch_anchor = np.stack(
        [
            rng.uniform(0.08, 0.48, size=(n_arch, cfg.persons)),
            rng.uniform(0.08, 0.92, size=(n_arch, cfg.persons)),
        ],
        axis=2,
    )
    arch_drift = rng.normal(0.0, 0.08, size=(n_arch, cfg.persons, 2))
    arch_appearance = roster[None, :, :] + rng.normal(
        0.0,
        cfg.appearance_scale * cfg.class_appearance_strength,
        size=(n_arch, cfg.persons, cfg.feature_dim),
    )

    videos: list[VideoFeatures] = []
    split: dict[str, str] = {}
    counts: list[tuple[str, int]] = []
    t_frac = (
        np.arange(cfg.frames, dtype=np.float64) / max(cfg.frames - 1, 1)
    )[:, None, None]
    counter = 0

    for cls_idx, name in enumerate(names):
        arch = cls_idx // 2
        mirrored = cls_idx % 2 == 1
        anchor = arch_anchor[arch].copy()
        drift = arch_drift[arch].copy()
        if mirrored:
            anchor[:, 0] = 1.0 - anchor[:, 0]
            drift[:, 0] = -drift[:, 0]
        base_positions = anchor[None, :, :] + drift[None, :, :] * t_frac  # (T, N, 2)

        per_class = cfg.train_per_class + cfg.test_per_class
        for j in range(per_class):
            offset = rng.normal(0.0, 1.0, size=(cfg.persons, 2)) * cfg.noise_scale
            wobble = (
                rng.normal(0.0, 1.0, size=(cfg.frames, cfg.persons, 2))
                * (0.25 * cfg.noise_scale)
            )
            positions = np.clip(base_positions + offset[None, :, :] + wobble, 0.0, 1.0)
            app_jitter = (
                rng.normal(0.0, 1.0, size=(cfg.persons, cfg.feature_dim))
                * (cfg.noise_scale * cfg.appearance_scale)
            )
            appearance = np.broadcast_to(
                arch_appearance[arch] + app_jitter,
                (cfg.frames, cfg.persons, cfg.feature_dim),
            ).copy()
            vid = VideoFeatures(
                id=f"v{counter:04d}",
                appearance=appearance,
                positions=positions,
                class_label=name,
            )
            videos.append(vid)
            split[vid.id] = "train" if j < cfg.train_per_class else "test"
            counter += 1
        counts.append((name, per_class))

    return Dataset(
        id=f"synthetic-{cfg.seed}",
        feature_dim=cfg.feature_dim,
        videos=videos,
        split=split,
        class_catalog=counts,
    )


def oracle_annotate(selected_ids: Sequence[str], target_class: str,
                    dataset: Dataset) -> list[Annotation]:
    """Scripted annotator: positive iff the clip's ground-truth class matches."""
    index = dataset.index
    annotations = []
    for vid in selected_ids:
        if vid not in index:
            raise ValidationError(f"unknown video id {vid!r}")
        label = "positive" if index[vid].class_label == target_class else "negative"
        annotations.append(Annotation(video_id=vid, label=label, annotator="oracle"))
    return annotations


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def _video_record(video: VideoFeatures, split: str) -> dict:
    return {
        "id": video.id,
        "split": split,
        "class": video.class_label,
        "frames": video.frames,
        "persons": video.persons,
        "positions": video.positions.tolist(),
        "appearance": video.appearance.tolist(),
    }


def save_dataset(dataset: Dataset, path: str | Path, meta: dict | None = None) -> None:
    header: dict = {
        "version": DATASET_FORMAT_VERSION,
        "kind": "dataset",
        "id": dataset.id,
        "feature_dim": dataset.feature_dim,
        "class_catalog": [[name, count] for name, count in dataset.class_catalog],
    }
    if meta:
        header["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for video in dataset.videos:
            fh.write(json.dumps(_video_record(video, dataset.split[video.id])) + "\n")


def _parse_video_record(record: dict, line_no: int, feature_dim: int) -> tuple[VideoFeatures, str]:
    for fld in ("id", "split", "positions", "appearance"):
        if fld not in record:
            raise ParseError(f"line {line_no}: video record missing field {fld!r}")
    vid = record["id"]
    appearance = np.asarray(record["appearance"], dtype=np.float64)
    positions = np.asarray(record["positions"], dtype=np.float64)
    if appearance.ndim != 3:
        raise ParseError(f"line {line_no}: video {vid!r} appearance is not a T x N x C array")
    if appearance.shape[2] != feature_dim:
        raise ValidationError(
            f"line {line_no}: video {vid!r} has feature dimension "
            f"{appearance.shape[2]}, header declares {feature_dim}"
        )
    if record["split"] not in ("train", "test"):
        raise ParseError(f"line {line_no}: video {vid!r} has invalid split {record['split']!r}")
    try:
        video = VideoFeatures(
            id=vid,
            appearance=appearance,
            positions=positions,
            class_label=record.get("class"),
        )
    except GroupActError as exc:
        raise ParseError(f"line {line_no}: video {vid!r}: {exc}") from exc
    return video, record["split"]


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    videos: list[VideoFeatures] = []
    split: dict[str, str] = {}
    header: dict | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"{path.name}: line {line_no}, char {exc.pos}: {exc.msg}"
                ) from exc
            if header is None:
                if not isinstance(record, dict) or record.get("kind") != "dataset":
                    raise ParseError(f"{path.name}: line 1 is not a dataset header")
                if record.get("version") != DATASET_FORMAT_VERSION:
                    raise ParseError(
                        f"{path.name}: unsupported dataset version {record.get('version')!r}, "
                        f"expected {DATASET_FORMAT_VERSION}"
                    )
                header = record
                continue
            video, split_tag = _parse_video_record(record, line_no, header["feature_dim"])
            videos.append(video)
            split[video.id] = split_tag
    if header is None:
        raise ParseError(f"{path.name}: empty file, expected a dataset header")
    return Dataset(
        id=header["id"],
        feature_dim=header["feature_dim"],
        videos=videos,
        split=split,
        class_catalog=[(name, count) for name, count in header.get("class_catalog", [])],
    )


# ---------------------------------------------------------------------------
# External feature import/export (headerless record stream)
# ---------------------------------------------------------------------------


def export_features(dataset: Dataset, path: str | Path) -> None:
    """Write clips as a headerless JSONL record stream (import_features schema)."""
    with open(path, "w", encoding="utf-8") as fh:
        for video in dataset.videos:
            fh.write(json.dumps(_video_record(video, dataset.split[video.id])) + "\n")


def import_features(path: str | Path, schema: str = "jsonl",
                    strict: bool = True, dataset_id: str | None = None) -> Dataset:
    """Build a dataset from externally computed per-person feature records.

    Each JSONL record needs id, positions (T x N x 2) and appearance
    (T x N x C); class and split are optional (split defaults to train).
    Positions outside [0, 1] are rejected when strict, else clamped with a
    warning. Records with inconsistent dimensions are reported together.
    """
    if schema != "jsonl":
        raise ConfigError(f"unsupported import schema {schema!r}")
    path = Path(path)
    videos: list[VideoFeatures] = []
    split: dict[str, str] = {}
    feature_dim: int | None = None
    bad_records: list[str] = []

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path.name}: line {line_no}, char {exc.pos}: {exc.msg}") from exc
            rid = record.get("id", f"<line {line_no}>")
            missing = [f for f in ("id", "positions", "appearance") if f not in record]
            if missing:
                raise ParseError(
                    f"{path.name}: line {line_no}: record {rid!r} missing field(s) "
                    f"{', '.join(repr(m) for m in missing)}"
                )
            appearance = np.asarray(record["appearance"], dtype=np.float64)
            positions = np.asarray(record["positions"], dtype=np.float64)
            if appearance.ndim != 3 or positions.shape != appearance.shape[:2] + (2,):
                bad_records.append(rid)
                continue
            if feature_dim is None:
                feature_dim = appearance.shape[2]
            elif appearance.shape[2] != feature_dim:
                bad_records.append(rid)
                continue
            if positions.size and (positions.min() < 0.0 or positions.max() > 1.0):
                if strict:
                    raise ValidationError(
                        f"record {rid!r}: positions outside [0, 1]^2 (strict mode)"
                    )
                logger.warning("record %r: clamping positions into [0, 1]^2", rid)
                positions = np.clip(positions, 0.0, 1.0)
            videos.append(
                VideoFeatures(
                    id=record["id"],
                    appearance=appearance,
                    positions=positions,
                    class_label=record.get("class"),
                )
            )
            split[record["id"]] = record.get("split", "train")

    if bad_records:
        raise ValidationError(
            "records with inconsistent dimensions: " + ", ".join(repr(r) for r in bad_records)
        )
    if feature_dim is None:
        raise ParseError(f"{path.name}: no records found")

    classes: dict[str, int] = {}
    for v in videos:
        if v.class_label is not None:
            classes[v.class_label] = classes.get(v.class_label, 0) + 1
    return Dataset(
        id=dataset_id or path.stem,
        feature_dim=feature_dim,
        videos=videos,
        split=split,
        class_catalog=sorted(classes.items()),
    )
