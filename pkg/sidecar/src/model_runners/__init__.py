"""Stage runners that write segmentation, refinement, inpainting, and CLIP
sample files in the forge pipeline's filesystem contracts."""

__version__ = "0.1.0"
