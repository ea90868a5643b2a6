"""Latent class growth models combined with marginal structural models.

Summarize binary treatment trajectories into latent groups, then estimate the
causal effect of group membership on an outcome by inverse probability of
treatment weighting.
"""
__version__ = "0.1.0"
