"""Privacy-preserving representations through a vector-quantized bottleneck.

A small temporal encoder is trained for a content task while its bottleneck
frames are snapped to a finite codebook. Shrinking the codebook removes
speaker detail; the evaluation harness measures how much, and at what cost to
content accuracy.
"""
from .errors import VQPrivacyError
from .numerics import RngStream

__version__ = "0.1.0"

__all__ = ["RngStream", "VQPrivacyError", "__version__"]
