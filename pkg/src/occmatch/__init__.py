"""Hungarian-matched occupancy and trajectory prediction on synthetic occlusion scenes."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
