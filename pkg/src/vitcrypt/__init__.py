"""Block-wise keyed image encryption paired with the matching vision-transformer
embedding transformation, plus the harness that verifies their equivalence."""

from .keyrand import KeySet
from .images import Image
from .vit import VitConfig, VitModel

__all__ = ["KeySet", "Image", "VitConfig", "VitModel"]
__version__ = "0.1.0"
