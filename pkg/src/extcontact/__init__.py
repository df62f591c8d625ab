"""Multimodal extrinsic-contact estimation from point clouds, rotation, wrench and tactile maps."""

from .encoders import ModelConfig
from .errors import DataError, FormatError, NumericalError
from .fusion import ALL, PRESENCE_PATTERNS, ModalityPresence
from .labels import LabelGenParams, extract_contact_patch, generate_affordance
from .model import ContactModel, load_checkpoint, save_checkpoint

__all__ = [
    "ALL", "PRESENCE_PATTERNS", "ContactModel", "DataError", "FormatError", "LabelGenParams",
    "ModalityPresence", "ModelConfig", "NumericalError", "extract_contact_patch",
    "generate_affordance", "load_checkpoint", "save_checkpoint",
]
__version__ = "0.1.0"
