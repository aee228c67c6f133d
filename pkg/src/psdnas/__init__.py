"""Training-free ranking and selection of Deep Image Prior architectures by output spectra."""

__version__ = "0.1.0"
