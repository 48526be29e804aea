"""Head-motion trajectory de-noising: autoencoder filter, linear baselines and metrics."""

__version__ = "0.1.0"
