"""Linear variational/Bayesian JEPA world models and the Noisy-TV benchmark."""
__version__ = "0.1.0"
