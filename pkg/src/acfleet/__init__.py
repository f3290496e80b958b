"""Hardware-in-the-loop capable simulator of an air-conditioner fleet
providing grid frequency regulation."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
