"""Beta-Bernoulli process sparse coding with deep decoder networks.

Binary latent codes under a finite beta-process prior, encoded by greedy
pursuit against Gaussian, Poisson, or Bernoulli likelihoods, with
closed-form scale posteriors and ADAM decoder updates.
"""

from bbsc.backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
