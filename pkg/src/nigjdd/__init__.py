"""Joint demosaicking and denoising with a normal-inverse-gamma uncertainty model."""

__version__ = "0.1.0"
