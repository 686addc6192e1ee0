"""Volume-to-Gaussian-splat pipeline: render, select views, fit, compress."""

from . import (camera, compress, envmap, gp, image, metrics, phantoms, splats,
               ssim, tracer, train, views, volume)

__version__ = "0.1.0"

__all__ = ["camera", "compress", "envmap", "gp", "image", "metrics",
           "phantoms", "splats", "ssim", "tracer", "train", "views", "volume",
           "__version__"]
