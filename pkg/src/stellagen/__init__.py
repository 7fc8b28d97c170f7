"""Conditional diffusion for stellarator boundary design.

Modules: ``surface`` (tensor-Fourier boundaries and geometry), ``qsmetrics``
(quasisymmetry and constraint errors), ``pca``, ``mlp`` (noise-prediction
network), ``ddpm`` (schedule, training, sampling), ``dataset`` and ``cli``.
"""

__version__ = "0.1.0"
