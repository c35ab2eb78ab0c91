"""Multi-weight traffic graph convolution (MW-TGC) speed forecasting."""

__version__ = "0.1.0"
