"""wavectl: spectral synthesis and verification of localized pressure controls
for small-amplitude gravity-capillary water waves on the torus."""

from wavectl.spectral import Grid

__all__ = ["Grid"]
__version__ = "0.1.0"
