"""Numerical laboratory for the continuous-time weakly self-avoiding walk.

Five building blocks:

- ``lattice``: exact geometry, Laplacian, heat kernels and Green functions
  on Z^d and on discrete tori.
- ``covdecomp``: finite-range decompositions of the massive lattice Green
  function, with exact-integer construction and certified truncation tails.
- ``rgflow``: the scale-by-scale flow of the observable coupling constants,
  its closed-form solution, and the limiting two-point identity.
- ``wsaw_mc``: continuous-time Monte Carlo for walks penalized by their
  self-intersection local time.
- ``cli``: reproducible experiment front end (CSV/JSON artifacts).
"""

__version__ = "0.1.0"
