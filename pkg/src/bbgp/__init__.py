"""Gaussian process regression with bias-certified Krylov likelihood estimates."""
