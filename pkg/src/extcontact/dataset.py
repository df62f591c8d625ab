"""Episode files, train/valid splitting and validation partitions."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .binfmt import read_header, read_tensor, write_container
from .errors import DataError, FormatError
from .synth import Episode, FrameSample

TENSOR_ORDER = ("cloud", "quaternion", "wrench", "tactile_left", "tactile_right")
SPLITS = ("train", "valid")
PARTITIONS = ("all_contact", "single_contact", "no_contact")
EPISODE_SUFFIX = ".unic"


def write_episode(ep: Episode, path) -> None:
    if not ep.frames:
        raise DataError("episode has no frames")
    f0 = ep.frames[0]
    M = f0.cloud.shape[0]
    H, W = f0.tactile_left.shape[:2]
    header = {
        "kind": "episode",
        "id": ep.id,
        "frame_count": len(ep.frames),
        "H": H,
        "W": W,
        "M": M,
        "annotation": np.asarray(ep.annotation, dtype=np.float32).astype(float).tolist(),
        "contact": bool(ep.contact),
        "mode": ep.mode,
        "object_kind": ep.object_kind,
        "unseen": bool(ep.unseen),
        "config_digest": ep.config_digest,
        "rate_hz": ep.rate_hz,
        "tensor_order": list(TENSOR_ORDER),
        "meta": ep.meta,
    }
    tensors = []
    for fr in ep.frames:
        expected = ((M, 3), (4,), (6,), (H, W, 2), (H, W, 2))
        got = (fr.cloud.shape, fr.rotation.shape, fr.wrench.shape,
               fr.tactile_left.shape, fr.tactile_right.shape)
        assert got == expected, f"frame tensor shapes {got} disagree with header {expected}"
        tensors.extend([fr.cloud, fr.rotation, fr.wrench, fr.tactile_left, fr.tactile_right])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        write_container(fh, header, tensors)
    os.replace(tmp, path)


def read_episode_header(path) -> dict:
    with open(path, "rb") as fh:
        header = read_header(fh, "episode")
    if header.get("kind") != "episode":
        raise FormatError("not a UNIC episode file")
    return header


def read_episode(path) -> Episode:
    with open(path, "rb") as fh:
        header = read_header(fh, "episode")
        if header.get("kind") != "episode":
            raise FormatError("not a UNIC episode file")
        try:
            M, H, W, n = header["M"], header["H"], header["W"], header["frame_count"]
        except KeyError as exc:
            raise FormatError(f"episode header lacks {exc}") from exc
        ann = np.asarray(header["annotation"], dtype=np.float32).reshape(-1, 3)
        contact = bool(header["contact"])
        if contact != (len(ann) > 0):
            raise FormatError("annotation must be nonempty exactly for contact episodes")
        frames = []
        for _ in range(n):
            cloud = read_tensor(fh, (M, 3))
            quat = read_tensor(fh, (4,))
            wrench = read_tensor(fh, (6,))
            tl = read_tensor(fh, (H, W, 2))
            tr = read_tensor(fh, (H, W, 2))
            for name, arr in zip(TENSOR_ORDER, (cloud, quat, wrench, tl, tr)):
                if not np.all(np.isfinite(arr)):
                    raise FormatError(f"non-finite values in {name}")
            if abs(float(np.linalg.norm(quat.astype(float))) - 1.0) > 1e-6:
                raise FormatError("rotation quaternion is not unit norm")
            frames.append(FrameSample(cloud, quat, wrench, tl, tr, ann, contact))
        if fh.read(1):
            raise FormatError("trailing bytes after tensor block")
    return Episode(
        id=header["id"], frames=frames, annotation=ann, contact=contact,
        mode=header.get("mode", ""), object_kind=header.get("object_kind", ""),
        unseen=bool(header.get("unseen", False)), config_digest=header.get("config_digest", ""),
        rate_hz=float(header.get("rate_hz", 10.0)), meta=header.get("meta", {}),
    )


# -- manifest -------------------------------------------------------------
@dataclass
class EpisodeEntry:
    id: str
    file: str
    frames: int
    contact: bool | None
    mode: str | None
    unseen: bool = False
    split: str = ""
    tags: list[str] = field(default_factory=list)


@dataclass
class DatasetManifest:
    episodes: list[EpisodeEntry]
    seed: int
    ratio: float
    root: str = "."

    def entries(self, split: str | None = None, tag: str | None = None) -> list[EpisodeEntry]:
        out = self.episodes
        if split is not None:
            out = [e for e in out if e.split == split]
        if tag is not None:
            out = [e for e in out if tag in e.tags]
        return out

    def frame_count(self, split: str | None = None, tag: str | None = None) -> int:
        return sum(e.frames for e in self.entries(split, tag))

    def path_of(self, entry: EpisodeEntry) -> Path:
        return Path(self.root) / entry.file

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ratio": self.ratio,
            "counts": {
                s: {"episodes": len(self.entries(s)), "frames": self.frame_count(s)} for s in SPLITS
            },
            "partitions": {
                p: {"episodes": len(self.entries("valid", p)), "frames": self.frame_count("valid", p)}
                for p in PARTITIONS
            },
            "episodes": [asdict(e) for e in self.episodes],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        d = json.loads(Path(path).read_text())
        eps = [EpisodeEntry(**e) for e in d["episodes"]]
        return cls(eps, d["seed"], d["ratio"], root=str(Path(path).parent))


def entry_for(ep: Episode | dict, file: str = "") -> EpisodeEntry:
    if isinstance(ep, Episode):
        return EpisodeEntry(ep.id, file, ep.num_frames, ep.contact, ep.mode, ep.unseen)
    return EpisodeEntry(ep["id"], file, ep["frame_count"], ep.get("contact"), ep.get("mode"),
                        bool(ep.get("unseen", False)))


def split_dataset(episodes, ratio: float = 0.8, seed: int = 0) -> DatasetManifest:
    """Episode-level seeded split; unseen-object episodes always go to validation."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    entries = [e if isinstance(e, EpisodeEntry) else entry_for(e) for e in episodes]
    if len(entries) < 2:
        raise DataError("need at least 2 episodes to split")
    seen = [i for i, e in enumerate(entries) if not e.unseen]
    order = np.random.default_rng(seed).permutation(len(seen))
    n_train = math.floor(ratio * len(seen) + 1e-9)
    train = {seen[k] for k in order[:n_train]}
    out = []
    for i, e in enumerate(entries):
        out.append(EpisodeEntry(e.id, e.file, e.frames, e.contact, e.mode, e.unseen,
                                split="train" if i in train else "valid"))
    return DatasetManifest(out, seed, ratio)


def partition_validation(manifest: DatasetManifest) -> DatasetManifest:
    """Tag validation episodes as all_contact / single_contact / no_contact."""
    if not any(e.split == "valid" for e in manifest.episodes):
        raise DataError("manifest has no validation split")
    out = []
    for e in manifest.episodes:
        tags: list[str] = []
        if e.split == "valid":
            if e.contact is None or not e.mode:
                raise DataError(f"episode {e.id} is untagged (no contact flag or mode)")
            if e.contact:
                tags.append("all_contact")
                if e.mode == "point":
                    tags.append("single_contact")
            else:
                tags.append("no_contact")
        out.append(EpisodeEntry(e.id, e.file, e.frames, e.contact, e.mode, e.unseen, e.split, tags))
    return DatasetManifest(out, manifest.seed, manifest.ratio, manifest.root)


def write_dataset(episodes: list[Episode], out_dir, ratio: float = 0.8, seed: int = 0) -> DatasetManifest:
    """Write episode files plus a partitioned ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for ep in episodes:
        name = f"{ep.id}{EPISODE_SUFFIX}"
        write_episode(ep, out / name)
        entries.append(entry_for(ep, name))
    manifest = partition_validation(split_dataset(entries, ratio, seed))
    manifest.root = str(out)
    manifest.save(out / "manifest.json")
    return manifest


def load_split(manifest: DatasetManifest, split: str, tag: str | None = None) -> list[Episode]:
    return [read_episode(manifest.path_of(e)) for e in manifest.entries(split, tag)]
