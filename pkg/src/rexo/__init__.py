"""Box-diffusion person detection from two-view radar heatmaps, with a synthetic radar simulator."""

__version__ = "0.1.0"
