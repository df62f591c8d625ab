"""Losses, the AdamW training loop and finite-difference gradient checks."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .dataset import DatasetManifest, load_split
from .encoders import ModelConfig
from .errors import DataError, NumericalError
from .fusion import ALL, ModalityPresence
from .geometry import downsample
from .labels import LabelGenParams, generate_affordance
from .metrics import METRICS, eval_frames, score_frames
from .model import Batch, ContactModel, save_checkpoint
from .nn import Linear, Module
from .synth import Episode

BASELINES = {"unic": "unic", "no-mask": "nomask", "nomask": "nomask", "visual": "visual", "e2e": "e2e"}
LOSSES = ("mse", "smooth_l1", "chamfer")
DEFAULT_MASK_RATIO = {"unic": 0.5, "nomask": 0.0, "visual": 0.0, "e2e": 0.0}


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    grad_clip: float = 1.0          # global norm; 0 disables
    schedule: str = "cosine"        # "cosine" (decays to lr_floor * lr) or "constant"
    lr_floor: float = 0.05
    mask_ratio: float | None = None  # None: baseline default
    loss: str | None = None          # None: mse, or chamfer for e2e
    baseline: str = "unic"
    seed: int = 0
    regression_points: int = 32
    val_every: int = 5
    pos_weight: float = 1.0          # loss weight on points with label > -1 (near contact)
    train_queries: int = 256         # head queries per frame during training; 0 = whole cloud
    augment_roll_deg: float = 0.0    # random camera roll about the optical axis; 0 disables
    augment_yaw: bool = False        # random world yaw on the rotation input (unobserved camera azimuth)
    dtype: str = "float32"
    label_sigma: float = 0.010
    label_scale: float = 2.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.regression_points < 1:
            raise ValueError("regression_points must be >= 1")
        if self.epochs < 0 or self.val_every < 1:
            raise ValueError("epochs must be >= 0 and val_every >= 1")
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.loss is not None and self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.mask_ratio is not None and not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0, 1]")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, progress: float) -> float:
        """Learning rate at ``progress`` in [0, 1] of the run."""
        if self.schedule == "constant":
            return self.lr
        f = self.lr_floor + (1.0 - self.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
        return self.lr * f

    @property
    def variant(self) -> str:
        return BASELINES[self.baseline]

    @property
    def effective_mask_ratio(self) -> float:
        return DEFAULT_MASK_RATIO[self.variant] if self.mask_ratio is None else self.mask_ratio

    @property
    def effective_loss(self) -> str:
        if self.loss is not None:
            return self.loss
        return "chamfer" if self.variant == "e2e" else "mse"

    @property
    def label_params(self) -> LabelGenParams:
        return LabelGenParams(self.label_sigma, self.label_scale)

    def model_config(self, base: ModelConfig | None = None) -> ModelConfig:
        """Model config with variant, masking ratio, L, dtype and seed taken from here."""
        base = base or ModelConfig()
        return dataclasses.replace(base, variant=self.variant, mask_ratio=self.effective_mask_ratio,
                                   regression_points=self.regression_points, dtype=self.dtype,
                                   seed=self.seed)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# -- losses -------------------------------------------------------------------
def loss_affordance(pred, label, kind: str = "mse", pos_weight: float = 1.0) -> Tensor:
    """Mean squared (or smooth-L1) error between predicted and target affordance.

    ``pos_weight`` scales the error on points whose label is above -1.
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred, dtype=float))
    label = np.asarray(label, dtype=pred.dtype)
    if pred.shape != label.shape:
        raise DataError(f"prediction shape {pred.shape} != label shape {label.shape}")
    diff = pred - Tensor(label)
    if kind == "mse":
        err = ag.square(diff)
    elif kind == "smooth_l1":
        err = ag.smooth_l1(diff, beta=0.1)
    else:
        raise ValueError(f"unknown affordance loss {kind!r}")
    if pos_weight != 1.0:
        err = err * Tensor(np.where(label > -1.0, pos_weight, 1.0).astype(pred.dtype))
    return ag.mean(err)


def loss_chamfer_regression(pred, gt, contact=None) -> Tensor:
    """Symmetric squared-distance Chamfer between (B, L, 3) point sets, batch-averaged.

    Frames flagged as no-contact have a single collapsed target, so every
    predicted point is pulled onto it: the loss is the mean squared distance.
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred, dtype=float))
    g = np.asarray(gt, dtype=pred.dtype)
    if pred.ndim == 2:
        pred, g = pred.reshape(1, *pred.shape), g[None]
        contact = None if contact is None else np.atleast_1d(contact)
    if pred.shape != g.shape or pred.shape[-1] != 3:
        raise DataError(f"prediction {pred.shape} and target {g.shape} must both be (B, L, 3)")
    B, L, _ = pred.shape
    contact = np.ones(B, dtype=bool) if contact is None else np.asarray(contact, dtype=bool)
    d = ag.tsum(ag.square(pred.reshape(B, L, 1, 3) - Tensor(g.reshape(B, 1, L, 3))), axis=-1)
    cham = 0.5 * (ag.mean(ag.tmin(d, axis=2), axis=1) + ag.mean(ag.tmin(d, axis=1), axis=1))
    pointwise = ag.mean(ag.tsum(ag.square(pred - Tensor(g)), axis=-1), axis=1)
    per_frame = ag.where(contact, cham, pointwise)
    return ag.mean(per_frame)


def make_regression_targets(cloud, affordance, L: int, seed) -> np.ndarray:
    """L target points from the positive-affordance patch; L origin points when there is none."""
    if L < 1:
        raise ValueError("L must be >= 1")
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    patch = pts[np.asarray(affordance).reshape(-1) > 0]
    if len(patch) == 0:
        return np.zeros((L, 3))
    return downsample(patch, L, seed)


# -- optimiser ----------------------------------------------------------------
class AdamW:
    """Adaptive moments with decoupled weight decay (not applied to 1-D tensors)."""

    def __init__(self, params: list[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr, self.eps, self.wd = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.wd and p.data.ndim > 1:
                p.data -= (self.lr * self.wd) * p.data
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(float) ** 2)) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * s
    return total


# -- data ---------------------------------------------------------------------
@dataclass
class FrameArrays:
    """All frames of a split stacked into arrays."""
    cloud: np.ndarray
    rotation: np.ndarray
    wrench: np.ndarray
    tactile_left: np.ndarray
    tactile_right: np.ndarray
    labels: np.ndarray
    contact: np.ndarray
    targets: np.ndarray | None = None   # (N, L, 3) e2e regression targets

    def __len__(self) -> int:
        return len(self.cloud)

    def batch(self, idx, dtype) -> Batch:
        return Batch(self.cloud[idx], self.rotation[idx], self.wrench[idx], self.tactile_left[idx],
                     self.tactile_right[idx], self.labels[idx]).astype(dtype)


def stack_frames(episodes: list[Episode], params: LabelGenParams, L: int | None = None,
                 seed: int = 0) -> FrameArrays:
    frames = [fr for ep in episodes for fr in ep.frames]
    if not frames:
        raise DataError("no frames to train on")
    labels = np.stack([generate_affordance(f.cloud, f.annotation, params) for f in frames])
    targets = None
    if L is not None:
        ss = np.random.SeedSequence([seed, 0x7A46]).spawn(len(frames))
        targets = np.stack([make_regression_targets(f.cloud, lab, L, np.random.default_rng(s))
                            for f, lab, s in zip(frames, labels, ss)])
    return FrameArrays(
        cloud=np.stack([f.cloud for f in frames]), rotation=np.stack([f.rotation for f in frames]),
        wrench=np.stack([f.wrench for f in frames]),
        tactile_left=np.stack([f.tactile_left for f in frames]),
        tactile_right=np.stack([f.tactile_right for f in frames]),
        labels=labels, contact=np.array([f.contact for f in frames]), targets=targets)


def _resolve_data(data) -> tuple[list[Episode], list[Episode]]:
    if isinstance(data, DatasetManifest):
        return load_split(data, "train"), load_split(data, "valid")
    if isinstance(data, dict):
        return list(data["train"]), list(data.get("valid", []))
    train_eps, valid_eps = data
    return list(train_eps), list(valid_eps)


# -- training loop --------------------------------------------------------------
@dataclass
class TrainResult:
    model: ContactModel
    history: list[dict] = field(default_factory=list)   # one dict per validation
    log_rows: list[tuple] = field(default_factory=list)  # (epoch, split, metric, value)
    checkpoint: Path | None = None
    log_path: Path | None = None

    def losses(self) -> list[float]:
        return [r[3] for r in self.log_rows if r[1] == "train" and r[2] == "loss"]

    def csv_text(self) -> str:
        buf = io.StringIO()
        _write_rows(buf, self.log_rows)
        return buf.getvalue()


def _write_rows(fh, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["epoch", "split", "metric", "value"])
    for r in rows:
        w.writerow([r[0], r[1], r[2], repr(float(r[3]))])


def roll_augment(cloud: np.ndarray, max_deg: float, rng) -> np.ndarray:
    """Rotate each (M, 3) camera-frame cloud about the optical (z) axis.

    Rolling the camera leaves the visible surface unchanged, so per-point labels
    stay valid; wrench and rotation live in other frames and are untouched.
    """
    a = np.deg2rad(rng.uniform(-max_deg, max_deg, size=len(cloud)))
    c, s = np.cos(a), np.sin(a)
    R = np.zeros((len(cloud), 3, 3))
    R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1], R[:, 2, 2] = c, -s, s, c, 1.0
    return np.einsum("bij,bmj->bmi", R, cloud).astype(cloud.dtype)


def yaw_augment(quats: np.ndarray, rng) -> np.ndarray:
    """Left-multiply each (w, x, y, z) quaternion by a uniform yaw about world z.

    The camera azimuth is uniform and never observed, so re-expressing the
    gripper orientation in a world frame turned about the vertical yields an
    equally valid sample; cloud, wrench, tactile and labels are unchanged.
    """
    half = rng.uniform(0.0, np.pi, size=len(quats))
    c, s = np.cos(half), np.sin(half)
    w, x, y, z = np.moveaxis(np.asarray(quats, dtype=float), -1, 0)
    out = np.stack([c * w - s * z, c * x - s * y, c * y + s * x, c * z + s * w], axis=-1)
    out *= np.where(out[:, :1] < 0, -1.0, 1.0)   # canonical sign, w >= 0
    return out.astype(quats.dtype)


def _step_loss(model: ContactModel, cfg: TrainConfig, data: FrameArrays, idx, rng) -> Tensor:
    dt = model.cfg.np_dtype
    batch = data.batch(idx, dt)
    if cfg.augment_roll_deg > 0 and cfg.variant != "e2e":
        batch.cloud = roll_augment(batch.cloud, cfg.augment_roll_deg, rng)
    if cfg.augment_yaw:
        batch.rotation = yaw_augment(batch.rotation, rng)
    B, M = batch.labels.shape
    if cfg.variant == "e2e":
        pred = model(batch, mask_rng=rng)
        origin = batch.cloud.mean(axis=1, keepdims=True)
        contact = data.contact[idx]
        gt = np.where(contact[:, None, None], data.targets[idx], origin).astype(dt)
        return loss_chamfer_regression(pred, gt, contact)
    Q = cfg.train_queries
    if 0 < Q < M:
        q = np.stack([rng.choice(M, size=Q, replace=False) for _ in range(B)])
        batch.sample_points = np.take_along_axis(batch.cloud, q[..., None], axis=1)
        target = np.take_along_axis(batch.labels, q, axis=1)
    else:
        target = batch.labels
    pred = model(batch, mask_rng=rng)
    return loss_affordance(pred, target, cfg.effective_loss, cfg.pos_weight)


def validate(model: ContactModel, frames, presence: ModalityPresence = ALL) -> dict:
    stats = score_frames(model, frames, presence)
    return {m: stats[m].summary()["mean"] for m in METRICS}


def train(model: ContactModel | None, data, cfg: TrainConfig, out_dir=None,
          model_config: ModelConfig | None = None, log=None) -> TrainResult:
    """Seeded minibatch training; returns the model, validation history and CSV rows.

    ``data`` is a :class:`DatasetManifest`, a ``{"train": [...], "valid": [...]}``
    dict of episodes, or a ``(train, valid)`` pair. When ``model`` is None it is
    built from ``model_config`` with the variant fields taken from ``cfg``.
    """
    train_eps, valid_eps = _resolve_data(data)
    if not train_eps:
        raise DataError("empty training split")
    if model is None:
        model = ContactModel(cfg.model_config(model_config))
    elif model.cfg.variant != cfg.variant:
        raise ValueError(f"model variant {model.cfg.variant!r} does not match baseline {cfg.baseline!r}")
    L = cfg.regression_points if cfg.variant == "e2e" else None
    data_tr = stack_frames(train_eps, cfg.label_params, L, cfg.seed)
    val_frames = eval_frames(valid_eps, cfg.label_params) if valid_eps else []

    params = model.parameters()
    opt = AdamW(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)
    order_rng = np.random.default_rng([cfg.seed, 1])
    step_rng = np.random.default_rng([cfg.seed, 2])
    result = TrainResult(model)
    n = len(data_tr)
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = max(1, steps_per_epoch * cfg.epochs)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(perm[start:start + cfg.batch_size])
            loss = _step_loss(model, cfg, data_tr, idx, step_rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {start // cfg.batch_size}"
                                     f" (lr={cfg.lr}, baseline={cfg.baseline})")
            model.zero_grad()
            loss.backward()
            clip_grad_norm(params, cfg.grad_clip)
            opt.lr = cfg.lr_at(step / total_steps)
            opt.step()
            step += 1
            total += value * len(idx)
            count += len(idx)
        result.log_rows.append((epoch, "train", "loss", total / count))
        if val_frames and (epoch % cfg.val_every == 0 or epoch == cfg.epochs):
            rec = validate(model, val_frames)
            rec["epoch"] = epoch
            result.history.append(rec)
            for m in METRICS:
                if rec[m] is not None:
                    result.log_rows.append((epoch, "valid", m, rec[m]))
        if log is not None:
            print(f"epoch {epoch}: loss {total / count:.5f}", file=log)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint = out / "model.ckpt"
        save_checkpoint(model, result.checkpoint, extra={"train": dataclasses.asdict(cfg)})
        result.log_path = out / "metrics.csv"
        with open(result.log_path, "w", newline="") as fh:
            _write_rows(fh, result.log_rows)
    return result


# -- gradient verification ------------------------------------------------------
GRAD_BLOCKS = ("tactile", "rotation", "wrench", "points", "trunk", "mask_token", "head")


def small_model_config(**overrides) -> ModelConfig:
    """Desk-size 64-bit config used for gradient checks (D=8, T=2, M=16)."""
    base = dict(d_model=8, tokens=2, patch=2, tactile_h=4, tactile_w=4, tactile_depth=1, tactile_heads=2,
                trunk_depth=2, trunk_heads=2, ff_mult=2, point_widths=(8, 8), vector_hidden=8,
                head_hidden=8, head_layers=2, num_points=16, dtype="float64", seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def _random_batch(cfg: ModelConfig, B: int, rng) -> Batch:
    M, H, W = cfg.num_points, cfg.tactile_h, cfg.tactile_w
    q = rng.normal(size=(B, 4))
    return Batch(cloud=rng.normal(0, 0.05, (B, M, 3)) + [0.0, 0.0, 0.6],
                 rotation=q / np.linalg.norm(q, axis=1, keepdims=True),
                 wrench=rng.normal(0, 3.0, (B, 6)), tactile_left=rng.normal(0, 0.2, (B, H, W, 2)),
                 tactile_right=rng.normal(0, 0.2, (B, H, W, 2)),
                 labels=np.tanh(rng.normal(size=(B, M))))


@dataclass
class GradCheckReport:
    errors: dict          # block -> relative error
    tolerance: float
    checked: dict         # block -> number of coordinates compared

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def _fd_compare(loss_fn, params: dict[str, list[Tensor]], step: float, max_coords: int,
                rng) -> tuple[dict, dict]:
    for ts in params.values():
        for p in ts:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    errors, checked = {}, {}
    for block, tensors in params.items():
        a_all, n_all = [], []
        for p in tensors:
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                up = float(loss_fn().data)
                flat[i] = orig - step
                down = float(loss_fn().data)
                flat[i] = orig
                n_all.append((up - down) / (2.0 * step))
                a_all.append(analytic.reshape(-1)[i])
        a, nm = np.array(a_all), np.array(n_all)
        denom = np.linalg.norm(a) + np.linalg.norm(nm)
        errors[block] = float(np.linalg.norm(a - nm) / denom) if denom > 0 else 0.0
        checked[block] = len(a_all)
    return errors, checked


def gradient_check(selector: str = "all", tolerance: float = 1e-4, step: float = 1e-5,
                   max_coords: int = 40, seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients with central differences on a scalar loss (64-bit).

    ``selector`` is one of :data:`GRAD_BLOCKS`, ``"all"`` (every block of the
    full model), ``"linear"`` (one linear layer under a quadratic loss) or
    ``"tanh"`` (a linear layer driven into tanh saturation).
    """
    rng = np.random.default_rng(seed)
    if selector in ("linear", "tanh"):
        layer = Linear(5, 4, rng, np.float64, init_scale=4.0 if selector == "tanh" else 1.0)
        x = Tensor(rng.normal(0, 1.0, (7, 5)))
        y = rng.normal(size=(7, 4))

        def loss_fn():
            out = layer(x)
            if selector == "tanh":
                out = ag.tanh(out)
            return ag.mean(ag.square(out - Tensor(y)))

        errs, checked = _fd_compare(loss_fn, {selector: layer.parameters()}, step, 0, rng)
        return GradCheckReport(errs, tolerance, checked)

    blocks = GRAD_BLOCKS if selector == "all" else (selector,)
    for b in blocks:
        if b not in GRAD_BLOCKS:
            raise ValueError(f"unknown gradient-check selector {selector!r}")
    cfg = small_model_config()
    model = ContactModel(cfg)
    batch = _random_batch(cfg, 2, rng)

    def loss_fn():
        # a plain pass reaches every encoder; a masked pass with one modality
        # substituted reaches the mask token (fixed draw, so the graph is stable)
        plain = loss_affordance(model(batch), batch.labels)
        masked = model(batch, ModalityPresence(tactile=False), mask_rng=np.random.default_rng(seed + 1))
        return plain + loss_affordance(masked, batch.labels)

    groups: dict[str, list[Tensor]] = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        if top in blocks:
            groups.setdefault(top, []).append(p)
    errs, checked = _fd_compare(loss_fn, groups, step, max_coords, rng)
    return GradCheckReport(errs, tolerance, checked)


def print_report(report: GradCheckReport, fh=sys.stdout) -> None:
    for b, e in report.errors.items():
        flag = "ok" if e < report.tolerance else "FAIL"
        print(f"{b:12s} rel.err {e:.3e} over {report.checked[b]} coords  {flag}", file=fh)
