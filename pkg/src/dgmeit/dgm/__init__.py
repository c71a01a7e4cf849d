"""Kernels of the three generative models: VAE, conditional flows, VE-SDE score sampling."""
