"""A learned 2D coordinate system for univariate distributions.

Synthesizes labeled random variables from 13 families, encodes each
series as a rank-level CDF grid image, trains a family classifier and
a beta-VAE on those images from scratch, and analyzes the resulting
latent plane: posterior density, weight-of-evidence segmentation,
entropy-ordered trajectories, and generative CDF decoding with
monotone repair.
"""

__version__ = "0.1.0"
