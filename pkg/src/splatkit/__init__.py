"""Desk-scale Gaussian splatting toolkit.

Reconstructs and renders 3D Gaussian scenes from sparse posed views under
varying illumination: a light encoder maps each image to a 16-dim code, an
appearance adapter transforms canonical SH colors per target lighting, and
training uses an occlusion-masked reconstruction loss over a three-stage
curriculum on self-generated synthetic data.
"""

__version__ = "0.1.0"
