"""Nonlinear-manifold reduced-order models with convolutional autoencoders."""
