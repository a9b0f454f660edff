"""PAC-Bayes bounds for tempered (cold/warm) isotropic Laplace posteriors."""

__version__ = "0.1.0"
