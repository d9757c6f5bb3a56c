"""Optimisation kernel: occupancy polytopes, LP, KL projection, simplex OGD."""
