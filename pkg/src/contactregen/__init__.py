"""Finite-range contact processes and oriented percolation: couplings,
break points, restart chains and large-deviation estimates."""

__version__ = "0.1.0"
