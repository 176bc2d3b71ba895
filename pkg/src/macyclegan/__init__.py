"""Manifold-aware Wasserstein CycleGAN for structural-to-DTI synthesis."""
__version__ = "0.1.0"
