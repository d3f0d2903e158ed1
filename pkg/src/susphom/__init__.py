"""Periodized effective viscosity of sphere suspensions and its cluster expansion.

Modules
-------
geometry
    Hardcore and parent-satellite point processes, periodized suspensions,
    many-point intensity and pair-correlation estimators.
kernels
    Single-sphere Stokes fields and the free and periodic strain kernels.
solver
    Stresslet-level periodic solver and a free-space reflection oracle.
cluster
    Subset sweeps, difference operators, cluster coefficients and the
    second-order pair integrals.
harness
    Seeded experiments, JSON configurations, CSV/SVG output and the CLI.
"""

__version__ = "0.1.0"
