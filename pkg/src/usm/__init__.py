"""U-shaped selective-scan diffusion backbone trained with rectified flow."""
from .kernels import backend_name

__version__ = "0.1.0"
