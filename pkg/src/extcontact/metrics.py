"""Contact metrics, the modality-removal evaluation matrix and inference timing."""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import bbox_diagonal, centroid, chamfer_distance
from .fusion import ALL, PRESENCE_PATTERNS, ModalityPresence
from .labels import LabelGenParams, extract_contact_patch, generate_affordance
from .model import Batch, ContactModel, make_batch
from .synth import Episode, FrameSample

METRICS = ("all_contact_mm", "single_contact_mm", "no_contact_mae")
SUBSET_OF = {"all_contact_mm": "all_contact", "single_contact_mm": "single_contact",
             "no_contact_mae": "no_contact"}


def empty_patch_penalty(cloud) -> float:
    """Score (mm) charged when a contact frame yields no predicted patch."""
    return 1000.0 * bbox_diagonal(cloud)


def metric_all_contact(pred, cloud, gt_patch) -> float:
    patch = extract_contact_patch(cloud, pred)
    if len(patch) == 0:
        return empty_patch_penalty(cloud)
    return 1000.0 * chamfer_distance(patch, gt_patch)


def metric_single_contact(pred, cloud, gt_point) -> float:
    patch = extract_contact_patch(cloud, pred)
    if len(patch) == 0:
        return empty_patch_penalty(cloud)
    return 1000.0 * float(np.linalg.norm(centroid(patch) - np.asarray(gt_point, dtype=float).reshape(3)))


def metric_no_contact(pred) -> float:
    return float(np.mean(np.abs(np.asarray(pred, dtype=float) + 1.0)))


# -- frame-level scoring ------------------------------------------------------
@dataclass
class EvalFrame:
    frame: FrameSample
    label: np.ndarray
    gt_patch: np.ndarray
    single: bool          # episode is a single-point contact


def eval_frames(episodes: list[Episode], params: LabelGenParams = LabelGenParams()) -> list[EvalFrame]:
    out = []
    for ep in episodes:
        single = ep.contact and ep.mode == "point"
        for fr in ep.frames:
            label = generate_affordance(fr.cloud, fr.annotation, params)
            out.append(EvalFrame(fr, label, extract_contact_patch(fr.cloud, label), single))
    return out


@dataclass
class CellStats:
    values: list[float] = field(default_factory=list)
    empty: int = 0
    skipped: int = 0   # contact frames whose ground-truth patch is empty

    def summary(self) -> dict:
        n = len(self.values)
        return {"mean": float(np.mean(self.values)) if n else None, "frames": n,
                "empty_patch_rate": self.empty / n if n else None, "skipped": self.skipped}


def _predict(model: ContactModel, frames: list[EvalFrame], presence: ModalityPresence,
             batch_size: int) -> list[np.ndarray]:
    preds = []
    dt = model.cfg.np_dtype
    for start in range(0, len(frames), batch_size):
        chunk = frames[start:start + batch_size]
        batch = make_batch([f.frame for f in chunk], dtype=dt)
        out = model.predict(batch, presence)
        preds.extend(np.asarray(o, dtype=float) for o in out)
    return preds


def score_frames(model: ContactModel, frames: list[EvalFrame], presence: ModalityPresence = ALL,
                 batch_size: int = 32) -> dict[str, CellStats]:
    """Per-frame scores of one presence pattern, pooled per metric."""
    cells = {m: CellStats() for m in METRICS}
    e2e = model.cfg.variant == "e2e"
    preds = _predict(model, frames, presence, batch_size)
    for ef, pred in zip(frames, preds):
        fr = ef.frame
        if not fr.contact:
            if not e2e:
                cells["no_contact_mae"].values.append(metric_no_contact(pred))
            continue
        targets = [("all_contact_mm", None)]
        if ef.single:
            targets.append(("single_contact_mm", fr.annotation.mean(axis=0)))
        for name, gt_point in targets:
            cell = cells[name]
            if name == "all_contact_mm" and len(ef.gt_patch) == 0:
                cell.skipped += 1
                continue
            if e2e:
                patch = pred   # regressed points are the patch
                if name == "all_contact_mm":
                    v = 1000.0 * chamfer_distance(patch, ef.gt_patch)
                else:
                    v = 1000.0 * float(np.linalg.norm(centroid(patch) - gt_point))
            else:
                empty = not np.any(pred > 0)
                cell.empty += int(empty)
                if name == "all_contact_mm":
                    v = metric_all_contact(pred, fr.cloud, ef.gt_patch)
                else:
                    v = metric_single_contact(pred, fr.cloud, gt_point)
            cell.values.append(v)
    return cells


# -- evaluation matrix ---------------------------------------------------------
@dataclass
class EvalReport:
    """Metric x presence-pattern table plus optional timing.

    ``cells[metric][pattern]`` holds the per-frame mean (None when the subset
    was empty or the metric does not apply).
    """
    cells: dict
    frames: dict
    empty_patch_rate: dict
    notices: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    variant: str = ""

    def value(self, metric: str, pattern: str = "All"):
        return self.cells[metric][pattern]

    def to_dict(self) -> dict:
        return {"variant": self.variant, "metrics": self.cells, "frames": self.frames,
                "empty_patch_rate": self.empty_patch_rate, "notices": self.notices,
                "timing": self.timing}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, out_dir, stem: str = "eval") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jpath, cpath = out / f"{stem}.json", out / f"{stem}.csv"
        jpath.write_text(self.to_json())
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", *PRESENCE_PATTERNS])
            for m in METRICS:
                w.writerow([m, *("" if self.cells[m][p] is None else repr(self.cells[m][p])
                                 for p in PRESENCE_PATTERNS)])
        return jpath, cpath


def eval_matrix(model: ContactModel, episodes: list[Episode], patterns: dict | None = None,
                params: LabelGenParams = LabelGenParams(), frames: list[EvalFrame] | None = None,
                log=sys.stderr) -> EvalReport:
    """All three metrics under every presence pattern, averaged per frame."""
    patterns = PRESENCE_PATTERNS if patterns is None else patterns
    frames = eval_frames(episodes, params) if frames is None else frames
    cells = {m: {} for m in METRICS}
    counts = {m: {} for m in METRICS}
    empty = {m: {} for m in METRICS[:2]}
    notices = []
    for pname, presence in patterns.items():
        stats = score_frames(model, frames, presence)
        for m in METRICS:
            s = stats[m].summary()
            cells[m][pname] = s["mean"]
            counts[m][pname] = s["frames"]
            if m in empty:
                empty[m][pname] = s["empty_patch_rate"]
            if s["frames"] == 0:
                why = "not applicable to this variant" if (m == "no_contact_mae" and
                                                           model.cfg.variant == "e2e") else "empty subset"
                note = f"{m} / {pname}: skipped ({why})"
                if note not in notices:
                    notices.append(note)
                    if log is not None:
                        print(f"notice: {note}", file=log)
    return EvalReport(cells, counts, empty, notices, variant=model.cfg.variant)


def average_reports(values: list[float | None]) -> float | None:
    """Mean over validations or seeds, ignoring missing cells."""
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def last_k_average(history: list[dict], metric: str, k: int = 10) -> float | None:
    """Average of ``metric`` over the last ``k`` validation records."""
    vals = [h[metric] for h in history if h.get(metric) is not None]
    return average_reports(vals[-k:])


# -- timing -------------------------------------------------------------------
def bench_inference(model: ContactModel, frame: FrameSample | None = None, presence: ModalityPresence = ALL,
                    repeats: int = 100, warmup: int = 5, num_points: int | None = None,
                    seed: int = 0) -> dict:
    """Wall-clock seconds of a single-frame forward pass (B = 1), pinned to one thread."""
    from threadpoolctl import threadpool_limits

    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    dt = model.cfg.np_dtype
    if frame is None:
        M = num_points or model.cfg.num_points
        rng = np.random.default_rng(seed)
        H, W = model.cfg.tactile_h, model.cfg.tactile_w
        q = rng.normal(size=4)
        batch = Batch(cloud=rng.normal(0, 0.05, (1, M, 3)) + [0, 0, 0.6], rotation=(q / np.linalg.norm(q))[None],
                      wrench=rng.normal(size=(1, 6)), tactile_left=rng.normal(0, 0.1, (1, H, W, 2)),
                      tactile_right=rng.normal(0, 0.1, (1, H, W, 2))).astype(dt)
    else:
        batch = make_batch([frame], dtype=dt)
    times = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            model.predict(batch, presence)
        for _ in range(repeats):
            t0 = time.perf_counter()
            model.predict(batch, presence)
            times.append(time.perf_counter() - t0)
    arr = np.asarray(times)
    return {"mean_s": float(arr.mean()), "std_s": float(arr.std()), "repeats": repeats,
            "warmup": warmup, "points": int(batch.cloud.shape[1]), "hz": 1.0 / float(arr.mean())
            if arr.mean() > 0 else math.inf}
