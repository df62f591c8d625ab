"""Masked multimodal fusion and the modality-agnostic transformer trunk."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoders import MODALITIES, ModelConfig
from .errors import NumericalError
from .nn import Module, TransformerEncoder


@dataclass(frozen=True)
class ModalityPresence:
    pointcloud: bool = True
    rotation: bool = True
    wrench: bool = True
    tactile: bool = True

    def __post_init__(self):
        if not any(self.flags()):
            raise ValueError("at least one modality must be present")

    def flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.pointcloud, self.rotation, self.wrench, self.tactile)

    def absent(self) -> list[str]:
        return [m for m, f in zip(MODALITIES, self.flags()) if not f]

    @classmethod
    def dropping(cls, *names: str) -> "ModalityPresence":
        aliases = {"rotation": "rotation", "rot": "rotation", "tac": "tactile", "tactile": "tactile",
                   "ft": "wrench", "wrench": "wrench", "pointcloud": "pointcloud", "pc": "pointcloud"}
        kw = {}
        for n in names:
            n = n.strip().lower()
            if not n:
                continue
            if n not in aliases:
                raise ValueError(f"unknown modality {n!r}")
            kw[aliases[n]] = False
        return cls(**kw)

    @classmethod
    def parse(cls, spec: str | None) -> "ModalityPresence":
        return cls.dropping(*(spec or "").split(","))


ALL = ModalityPresence()

# column order of the removal matrix
PRESENCE_PATTERNS: dict[str, ModalityPresence] = {
    "All": ALL,
    "no-Rotation": ModalityPresence(rotation=False),
    "no-Tac": ModalityPresence(tactile=False),
    "no-FT": ModalityPresence(wrench=False),
    "no-FT&Tac": ModalityPresence(wrench=False, tactile=False),
}


def sample_mask(batch: int, length: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean (batch, length) mask with floor(ratio * length) True entries per row."""
    k = int(np.floor(ratio * length + 1e-9))
    mask = np.zeros((batch, length), dtype=bool)
    if k == 0:
        return mask
    for b in range(batch):
        mask[b, rng.choice(length, size=k, replace=False)] = True
    return mask


def apply_training_mask(tokens: Tensor, ratio: float, mask_token: Tensor, rng) -> tuple[Tensor, np.ndarray]:
    """Replace a random floor(ratio * 4T) subset of rows with the mask token.

    ``tokens`` is ``(B, 4T, D)`` or ``(4T, D)``; each batch element draws its own
    positions. Returns the masked tokens and the boolean mask record.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    single = tokens.ndim == 2
    x = tokens.reshape(1, *tokens.shape) if single else tokens
    mask = sample_mask(x.shape[0], x.shape[1], ratio, rng)
    if mask.any():
        x = ag.where(mask[..., None], mask_token, x)
    if single:
        return x.reshape(*tokens.shape), mask[0]
    return x, mask


def substitute_missing(tokens: dict[str, Tensor | None], presence: ModalityPresence,
                       mask_token: Tensor) -> Tensor:
    """Concatenate modality tokens in fixed order; absent ones become mask-token rows."""
    if not any(presence.flags()):
        raise ValueError("all modalities absent")
    present = [tokens[m] for m, f in zip(MODALITIES, presence.flags()) if f]
    B, T, D = present[0].shape
    parts = []
    for m, flag in zip(MODALITIES, presence.flags()):
        if flag:
            if tokens.get(m) is None:
                raise ValueError(f"modality {m} marked present but has no tokens")
            parts.append(tokens[m])
        else:
            parts.append(ag.broadcast_to(mask_token.reshape(1, 1, D), (B, T, D)))
    return ag.concat(parts, axis=1)


class Trunk(Module):
    """Slot embeddings + transformer + pooling to one D-vector per sample.

    Each of the 4T slots has a learned embedding (modality and position in one)
    that is added after masking/substitution, so masked slots still say where
    they are.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        dt = cfg.np_dtype
        self.cfg = cfg
        S = 4 * cfg.tokens
        self.param("slot_embed", rng.normal(0.0, 0.02, size=(S, cfg.d_model)).astype(dt))
        if cfg.readout == "token":
            self.param("readout", rng.normal(0.0, 0.02, size=(1, 1, cfg.d_model)).astype(dt))
        self.child("encoder", TransformerEncoder(cfg.d_model, cfg.trunk_depth, cfg.trunk_heads,
                                                 cfg.ff_mult, rng, dt))

    def embed(self, seq: Tensor) -> Tensor:
        S = 4 * self.cfg.tokens
        if seq.shape[1] != S:
            raise ValueError(f"trunk expects {S} tokens, got {seq.shape[1]}")
        return seq + self.slot_embed

    def body(self, x: Tensor) -> Tensor:
        """Transformer plus pooling on already-embedded tokens."""
        B, _, D = x.shape
        if self.cfg.readout == "token":
            x = ag.concat([ag.broadcast_to(self.readout, (B, 1, D)), x], axis=1)
            out = self.encoder(x)[:, 0, :]
        else:
            out = self.encoder(x).mean(axis=1)
        if not np.all(np.isfinite(out.data)):
            raise NumericalError("non-finite activations in the fusion trunk")
        return out

    def __call__(self, seq: Tensor) -> Tensor:
        return self.body(self.embed(seq))


def trunk_forward(sequence, model) -> np.ndarray:
    """Global fused feature (D,) or (B, D) for a 4T x D sequence."""
    dt = model.cfg.np_dtype
    arr = np.asarray(sequence.data if isinstance(sequence, Tensor) else sequence, dtype=dt)
    single = arr.ndim == 2
    with ag.no_grad():
        out = model.trunk(Tensor(arr[None] if single else arr))
    return out.data[0] if single else out.data
