"""Full contact model: encoders -> fusion trunk -> per-point affordance head.

The head implements the broadcast-and-concatenate sampling dataflow: the
global feature ``(B, D)`` is paired with every sample point ``(B, M, 3)`` and a
small shared MLP scores each ``(D + 3)``-vector. The first layer's weight is
kept as one ``(D + 3, H)`` matrix but applied as ``g @ W[:D] + p @ W[D:]``,
which is the same linear map without materialising the ``(B, M, D + 3)`` block.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .binfmt import read_header, read_tensor, write_container
from .encoders import (MODALITIES, ModelConfig, PointEncoder, TactileEncoder, VectorEncoder,
                       normalise_quaternion)
from .errors import DataError, FormatError
from .fusion import ALL, ModalityPresence, apply_training_mask, substitute_missing, Trunk
from .nn import MLP, Linear, Module
from .synth import FrameSample


@dataclass
class Batch:
    cloud: np.ndarray      # (B, M, 3)
    rotation: np.ndarray   # (B, 4)
    wrench: np.ndarray     # (B, 6)
    tactile_left: np.ndarray
    tactile_right: np.ndarray
    labels: np.ndarray | None = None        # (B, M) affordance targets
    sample_points: np.ndarray | None = None  # (B, M', 3); defaults to ``cloud``

    def __len__(self) -> int:
        return self.cloud.shape[0]

    def astype(self, dtype) -> "Batch":
        conv = {f.name: (None if getattr(self, f.name) is None else np.asarray(getattr(self, f.name), dtype=dtype))
                for f in dataclasses.fields(self)}
        return Batch(**conv)


def make_batch(frames: list[FrameSample], labels: list[np.ndarray] | None = None, dtype=np.float64) -> Batch:
    return Batch(
        cloud=np.stack([f.cloud for f in frames]).astype(dtype),
        rotation=np.stack([f.rotation for f in frames]).astype(dtype),
        wrench=np.stack([f.wrench for f in frames]).astype(dtype),
        tactile_left=np.stack([f.tactile_left for f in frames]).astype(dtype),
        tactile_right=np.stack([f.tactile_right for f in frames]).astype(dtype),
        labels=None if labels is None else np.stack(labels).astype(dtype),
    )


class AffordanceHead(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        dt = cfg.np_dtype
        self.cfg = cfg
        D, H = cfg.d_model, cfg.head_hidden
        self.child("inp", Linear(D + 3, H, rng, dt))
        self.child("mlp", MLP([H] * cfg.head_layers + [1], rng, dt, final_scale=0.5,
                              activation=cfg.pointwise_activation))
        self.act = ag.tanh if cfg.pointwise_activation == "tanh" else ag.gelu

    def __call__(self, feature: Tensor, points: Tensor, origin: Tensor | None = None) -> Tensor:
        B, M, _ = points.shape
        D = self.cfg.d_model
        x = points if origin is None else points - origin.reshape(B, 1, 3)
        x = x * (1.0 / self.cfg.coord_scale)
        W = self.inp.weight
        g = ag.matmul(feature, W[:D]).reshape(B, 1, -1)
        h = self.act(ag.matmul(x, W[D:]) + g + self.inp.bias)
        return ag.tanh(self.mlp(h).reshape(B, M))


class RegressionHead(Module):
    """End-to-end baseline: global feature -> L camera-frame points."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        L = cfg.regression_points
        self.child("mlp", MLP([cfg.d_model, 4 * cfg.d_model, 4 * cfg.d_model, 3 * L], rng, cfg.np_dtype,
                              final_scale=0.5))

    def __call__(self, feature: Tensor, origin: Tensor) -> Tensor:
        B = feature.shape[0]
        out = self.mlp(feature).reshape(B, self.cfg.regression_points, 3)
        return out * self.cfg.coord_scale + origin.reshape(B, 1, 3)


class ContactModel(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        dt = cfg.np_dtype
        self.child("points", PointEncoder(cfg, rng))
        self.child("rotation", VectorEncoder(4, cfg, rng))
        self.child("wrench", VectorEncoder(6, cfg, rng, scale=cfg.wrench_scale))
        self.child("tactile", TactileEncoder(cfg, rng))
        self.param("mask_token", rng.normal(0.0, 0.02, size=cfg.d_model).astype(dt))
        self.child("trunk", Trunk(cfg, rng))
        if cfg.variant == "e2e":
            self.child("head", RegressionHead(cfg, rng))
        else:
            self.child("head", AffordanceHead(cfg, rng))

    # -- policy ------------------------------------------------------------
    @property
    def substitutes_with_mask(self) -> bool:
        """Masked models replace absent modalities with the mask token; others get zeros."""
        return self.cfg.variant == "unic"

    def effective_presence(self, presence: ModalityPresence) -> tuple[ModalityPresence, ModalityPresence]:
        """Split a request into (mask-substituted, zero-fed) absence patterns.

        Returns the presence seen by the substitution step and the one seen by
        the encoders.
        """
        flags = dict(zip(MODALITIES, presence.flags()))
        permanent = {"wrench", "tactile"} if self.cfg.variant == "visual" else set()
        if self.substitutes_with_mask:
            sub = ModalityPresence(**{m: flags[m] and m not in permanent for m in MODALITIES})
            return sub, ALL
        sub = ModalityPresence(**{m: m not in permanent for m in MODALITIES})
        feed = ModalityPresence(**{m: flags[m] or m in permanent for m in MODALITIES})
        return sub, feed

    # -- stages ------------------------------------------------------------
    def encode(self, batch: Batch, skip: ModalityPresence = ALL, zero: ModalityPresence = ALL):
        """Encoder tokens per modality plus the cloud centroid.

        Modalities absent in ``skip`` are not computed (None); modalities absent
        in ``zero`` are encoded from all-zero inputs.
        """
        dt = self.cfg.np_dtype
        B = len(batch)
        z = dict(zip(MODALITIES, zero.flags()))
        s = dict(zip(MODALITIES, skip.flags()))
        cloud = Tensor(np.asarray(batch.cloud, dtype=dt))
        tokens: dict[str, Tensor | None] = {}
        pc_in = cloud if z["pointcloud"] else Tensor(np.zeros_like(cloud.data))
        pc_tokens, origin = self.points(pc_in)
        tokens["pointcloud"] = pc_tokens if s["pointcloud"] else None
        if not z["pointcloud"] and self.cfg.coord_origin == "centroid":
            origin = Tensor(np.zeros((B, 3), dtype=dt))
        if s["rotation"]:
            q = normalise_quaternion(batch.rotation).astype(dt) if z["rotation"] else np.zeros((B, 4), dt)
            tokens["rotation"] = self.rotation(Tensor(q))
        else:
            tokens["rotation"] = None
        if s["wrench"]:
            w = np.asarray(batch.wrench, dtype=dt) if z["wrench"] else np.zeros((B, 6), dt)
            tokens["wrench"] = self.wrench(Tensor(w))
        else:
            tokens["wrench"] = None
        if s["tactile"]:
            if z["tactile"]:
                tl = np.asarray(batch.tactile_left, dtype=dt)
                tr = np.asarray(batch.tactile_right, dtype=dt)
            else:
                tl = tr = np.zeros(np.shape(batch.tactile_left), dtype=dt)
            tokens["tactile"] = self.tactile(Tensor(tl), Tensor(tr))
        else:
            tokens["tactile"] = None
        return tokens, origin

    def fused_sequence(self, batch: Batch, presence: ModalityPresence = ALL,
                       mask_rng: np.random.Generator | None = None, mask_ratio: float | None = None):
        """Trunk input (B, 4T, D), the centroid, and the training-mask record (or None)."""
        sub, feed = self.effective_presence(presence)
        tokens, origin = self.encode(batch, skip=sub, zero=feed)
        seq = substitute_missing(tokens, sub, self.mask_token)
        record = None
        ratio = self.cfg.mask_ratio if mask_ratio is None else mask_ratio
        if mask_rng is not None and ratio > 0:
            seq, record = apply_training_mask(seq, ratio, self.mask_token, mask_rng)
        return seq, origin, record

    def __call__(self, batch: Batch, presence: ModalityPresence = ALL,
                 mask_rng: np.random.Generator | None = None) -> Tensor:
        """Affordance (B, M) or, for the e2e variant, regressed points (B, L, 3).

        ``mask_rng`` switches on training-time random masking.
        """
        seq, origin, _ = self.fused_sequence(batch, presence, mask_rng)
        feature = self.trunk(seq)
        if self.cfg.variant == "e2e":
            return self.head(feature, origin)
        dt = self.cfg.np_dtype
        points = batch.cloud if batch.sample_points is None else batch.sample_points
        return self.head(feature, Tensor(np.asarray(points, dtype=dt)), origin)

    def predict(self, batch: Batch, presence: ModalityPresence = ALL) -> np.ndarray:
        with ag.no_grad():
            return self(batch, presence).data


# -- functional entry points ------------------------------------------------
def head_forward(feature, sample_points, model: ContactModel, origin=None) -> np.ndarray:
    """Per-point affordance in (-1, 1) for one global feature and a point list."""
    dt = model.cfg.np_dtype
    g = np.asarray(feature, dtype=dt)
    pts = np.asarray(sample_points, dtype=dt)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(pts))):
        raise DataError("head inputs must be finite")
    if pts.ndim != 2 or len(pts) == 0:
        raise DataError("sample points must be a nonempty (M, 3) array")
    o = None if origin is None else Tensor(np.asarray(origin, dtype=dt).reshape(1, 3))
    with ag.no_grad():
        out = model.head(Tensor(g.reshape(1, -1)), Tensor(pts[None]), o)
    return out.data[0]


def predict_frame(frame: FrameSample, presence: ModalityPresence, model: ContactModel,
                  sample_points: np.ndarray | None = None) -> np.ndarray:
    """Eval-mode prediction for one frame (no random masking)."""
    batch = make_batch([frame], dtype=model.cfg.np_dtype)
    if sample_points is not None:
        batch.sample_points = np.asarray(sample_points, dtype=model.cfg.np_dtype)[None]
    return model.predict(batch, presence)[0]


# -- checkpoints --------------------------------------------------------------
def save_checkpoint(model: ContactModel, path, extra: dict | None = None) -> None:
    """Write parameters in the episode container layout.

    Tensors are stored as little-endian float32, or float64 for 64-bit models
    so that reloading is exact.
    """
    state = list(model.named_parameters())
    dtype = "<f8" if model.cfg.np_dtype == np.float64 else "<f4"
    header = {
        "kind": "checkpoint",
        "dtype": "float64" if dtype == "<f8" else "float32",
        "model": model.cfg.to_dict(),
        "tensors": [{"name": n, "shape": list(p.shape)} for n, p in state],
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        write_container(fh, header, [p.data for _, p in state], dtype=dtype)


def load_checkpoint(path) -> tuple[ContactModel, dict]:
    with open(path, "rb") as fh:
        header = read_header(fh, "checkpoint")
        if header.get("kind") != "checkpoint":
            raise FormatError("not a UNIC checkpoint file")
        dtype = "<f8" if header.get("dtype") == "float64" else "<f4"
        state = {t["name"]: read_tensor(fh, tuple(t["shape"]), dtype) for t in header["tensors"]}
    cfg = ModelConfig.from_dict(header["model"])
    model = ContactModel(cfg)
    model.load_state_dict(state)
    return model, header.get("extra", {})


def checkpoint_bytes(path) -> bytes:
    return Path(path).read_bytes()


def describe(model: ContactModel) -> str:
    blocks = {}
    for name, p in model.named_parameters():
        blocks[name.split(".")[0]] = blocks.get(name.split(".")[0], 0) + p.data.size
    return json.dumps(blocks)
