"""MixQuant: mixed-precision post-training quantization between output features."""

__version__ = "0.1.0"
