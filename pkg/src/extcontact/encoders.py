"""Per-modality encoders, each emitting ``T`` tokens of width ``D``.

Inputs are batched: clouds ``(B, M, 3)``, quaternions ``(B, 4)``, wrenches
``(B, 6)`` and tactile maps ``(B, H, W, 2)``. Every encoder returns a
``(B, T, D)`` tensor.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError
from .nn import MLP, Linear, Module, TransformerEncoder

MODALITIES = ("pointcloud", "rotation", "wrench", "tactile")
VARIANTS = ("unic", "nomask", "visual", "e2e")


@dataclass
class ModelConfig:
    d_model: int = 32
    tokens: int = 4
    patch: int = 4
    tactile_h: int = 8
    tactile_w: int = 8
    tactile_depth: int = 2
    tactile_heads: int = 2
    trunk_depth: int = 2
    trunk_heads: int = 2
    ff_mult: int = 4
    point_widths: tuple[int, ...] = (32, 64)
    pointwise_activation: str = "tanh"   # per-point MLPs (encoder and head)
    vector_hidden: int = 64
    head_hidden: int = 64
    head_layers: int = 2
    num_points: int = 1024
    mask_ratio: float = 0.5
    readout: str = "mean"          # "mean" or "token"
    variant: str = "unic"
    regression_points: int = 32    # L, e2e only
    coord_scale: float = 0.03      # m per normalised unit
    coord_origin: str = "centroid"  # "centroid" or "fixed"
    fixed_origin: tuple[float, float, float] = (0.0, 0.0, 0.65)
    wrench_scale: float = 0.1
    tactile_scale: float = 4.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.d_model < 1 or self.tokens < 1:
            raise ValueError("d_model and tokens must be >= 1")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.readout not in ("mean", "token"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.coord_origin not in ("centroid", "fixed"):
            raise ValueError(f"unknown coord_origin {self.coord_origin!r}")
        self.point_widths = tuple(self.point_widths)
        self.fixed_origin = tuple(self.fixed_origin)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def patch_grid(self) -> tuple[int, int]:
        p = self.patch
        return -(-self.tactile_h // p), -(-self.tactile_w // p)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DataError(f"{what} contains non-finite values")


class TactileEncoder(Module):
    """Patchify -> linear patch embedding -> positional embedding -> transformer.

    Both fingertips go through the same encoder; their token sequences are
    concatenated (left first) and a linear map balances them to T x D.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        dt = cfg.np_dtype
        self.cfg = cfg
        gh, gw = cfg.patch_grid
        self.num_patches = gh * gw
        D, P = cfg.d_model, cfg.patch
        self.child("embed", Linear(P * P * 2, D, rng, dt))
        self.param("pos", rng.normal(0.0, 0.02, size=(self.num_patches, D)).astype(dt))
        self.child("encoder", TransformerEncoder(D, cfg.tactile_depth, cfg.tactile_heads, cfg.ff_mult, rng, dt))
        self.child("balance", Linear(2 * self.num_patches * D, cfg.tokens * D, rng, dt))

    def patchify(self, maps: Tensor) -> Tensor:
        cfg = self.cfg
        B, H, W, C = maps.shape
        if (H, W, C) != (cfg.tactile_h, cfg.tactile_w, 2):
            raise DataError(f"tactile map shape {(H, W, C)} != {(cfg.tactile_h, cfg.tactile_w, 2)}")
        P = cfg.patch
        gh, gw = cfg.patch_grid
        # zero-pad up to whole patches
        if gh * P > H:
            maps = ag.concat([maps, Tensor(np.zeros((B, gh * P - H, W, 2), dtype=maps.dtype))], axis=1)
        if gw * P > W:
            maps = ag.concat([maps, Tensor(np.zeros((B, gh * P, gw * P - W, 2), dtype=maps.dtype))], axis=2)
        x = maps.reshape(B, gh, P, gw, P, 2).transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(B, gh * gw, P * P * 2)

    def embed_patches(self, maps: Tensor) -> Tensor:
        return self.embed(self.patchify(maps))

    def encode_one(self, maps: Tensor) -> Tensor:
        return self.encoder(self.embed_patches(maps) + self.pos)

    def __call__(self, left: Tensor, right: Tensor) -> Tensor:
        B = left.shape[0]
        s = self.cfg.tactile_scale
        seq = ag.concat([self.encode_one(left * s), self.encode_one(right * s)], axis=1)
        flat = seq.reshape(B, 2 * self.num_patches * self.cfg.d_model)
        return self.balance(flat).reshape(B, self.cfg.tokens, self.cfg.d_model)


class VectorEncoder(Module):
    """Small MLP on a low-dimensional signal, linearly reshaped to T x D."""

    def __init__(self, in_dim: int, cfg: ModelConfig, rng, scale: float = 1.0):
        super().__init__()
        self.cfg = cfg
        self.scale = scale
        h = cfg.vector_hidden
        self.child("mlp", MLP([in_dim, h, h], rng, cfg.np_dtype))
        self.child("balance", Linear(h, cfg.tokens * cfg.d_model, rng, cfg.np_dtype))

    def __call__(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        feats = self.mlp(x * self.scale if self.scale != 1.0 else x, final_activation=True)
        return self.balance(feats).reshape(B, self.cfg.tokens, self.cfg.d_model)


class PointEncoder(Module):
    """Shared per-point MLP, average pooling over T fixed random subsets, projection to D.

    Coordinates are centred on the cloud centroid (or a fixed camera-frame
    origin) and divided by ``coord_scale`` before the MLP.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        widths = (3, *cfg.point_widths)
        self.child("mlp", MLP(list(widths), rng, cfg.np_dtype, activation=cfg.pointwise_activation))
        self.child("project", Linear(widths[-1], cfg.d_model, rng, cfg.np_dtype))
        M, T = cfg.num_points, cfg.tokens
        if M < T:
            raise ValueError("need at least one point per token subset")
        perm = np.random.default_rng([cfg.seed, 0x5EED]).permutation(M)
        self.subsets = [np.sort(c) for c in np.array_split(perm, T)]
        pool = np.zeros((T, M), dtype=cfg.np_dtype)
        for t, idx in enumerate(self.subsets):
            pool[t, idx] = 1.0 / len(idx)
        self.pool = pool

    def normalise(self, cloud: Tensor) -> tuple[Tensor, Tensor]:
        B = cloud.shape[0]
        if self.cfg.coord_origin == "fixed":
            origin = Tensor(np.broadcast_to(np.asarray(self.cfg.fixed_origin, dtype=cloud.dtype), (B, 1, 3)))
        else:
            origin = cloud.mean(axis=1, keepdims=True)
        return (cloud - origin) * (1.0 / self.cfg.coord_scale), origin.reshape(B, 3)

    def point_features(self, cloud: Tensor) -> Tensor:
        """Per-point features of already-normalised coordinates, (B, M, F)."""
        return self.mlp(cloud, final_activation=True)

    def __call__(self, cloud: Tensor) -> tuple[Tensor, Tensor]:
        """Tokens (B, T, D) and the centroid (B, 3) used for normalisation."""
        if cloud.shape[1] != self.cfg.num_points:
            raise DataError(f"cloud has {cloud.shape[1]} points, encoder expects {self.cfg.num_points}")
        x, origin = self.normalise(cloud)
        pooled = ag.matmul(Tensor(self.pool), self.point_features(x))
        return self.project(pooled), origin


# -- functional wrappers -----------------------------------------------------
def _batch(x, dtype, ndim: int) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.ndim == ndim else x.reshape(1, *x.shape)
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr if arr.ndim == ndim else arr[None])


def normalise_quaternion(q: np.ndarray) -> np.ndarray:
    """Rescale to unit norm (sign is left alone); rejects the zero quaternion."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12) or not np.all(np.isfinite(n)):
        raise DataError("zero quaternion")
    return q / n


def encode_tactile(left, right, model) -> np.ndarray:
    dt = model.cfg.np_dtype
    l, r = np.asarray(left, dtype=dt), np.asarray(right, dtype=dt)
    if l.shape != r.shape:
        raise DataError(f"left {l.shape} and right {r.shape} tactile maps differ in shape")
    _check_finite(l, "tactile map")
    _check_finite(r, "tactile map")
    with ag.no_grad():
        out = model.tactile(_batch(l, dt, 4), _batch(r, dt, 4))
    return out.data[0] if np.ndim(left) == 3 else out.data


def encode_rotation(q, model) -> np.ndarray:
    dt = model.cfg.np_dtype
    qn = normalise_quaternion(q).astype(dt)
    with ag.no_grad():
        out = model.rotation(_batch(qn, dt, 2))
    return out.data[0] if np.ndim(q) == 1 else out.data


def encode_wrench(w, model) -> np.ndarray:
    dt = model.cfg.np_dtype
    arr = np.asarray(w, dtype=dt)
    _check_finite(arr, "wrench")
    with ag.no_grad():
        out = model.wrench(_batch(arr, dt, 2))
    return out.data[0] if arr.ndim == 1 else out.data


def encode_pointcloud(cloud, model) -> np.ndarray:
    dt = model.cfg.np_dtype
    arr = np.asarray(cloud, dtype=dt)
    _check_finite(arr, "point cloud")
    with ag.no_grad():
        out, _ = model.points(_batch(arr, dt, 3))
    return out.data[0] if arr.ndim == 2 else out.data
