"""Structure-preserving simulation of stochastic volume-filling cross-diffusion."""
