"""CART propensity score estimation under missing covariate data."""
