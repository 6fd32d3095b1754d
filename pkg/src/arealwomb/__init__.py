"""Areal wombling with covariate-modelled adjacency and a spatial stick-breaking prior."""
