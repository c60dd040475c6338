"""Canonical second-order operators and brackets on densities of projectively connected manifolds."""
