"""Two-scale (HOMS) finite-element solver for quasi-periodic thermo-hygro-elastic composites."""

__version__ = "0.1.0"
