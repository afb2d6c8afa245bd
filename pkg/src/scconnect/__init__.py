"""Connected spatially coupled LDPC code ensembles.

Builders for chains, loops and squares of coupled protographs, BEC and AWGN
density evolution, a selective update schedule, weight enumerator growth
rates, and lifting plus BP simulation.
"""

__version__ = "0.1.0"
