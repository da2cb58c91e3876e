"""Garment shape spaces over UV-position maps with masks.

Pipeline: represent garments as UV-position maps, learn a latent shape space
with a PCA parameterization, animate shapes under body poses, and infer shape
parameters from posed meshes.
"""

__version__ = "0.1.0"
