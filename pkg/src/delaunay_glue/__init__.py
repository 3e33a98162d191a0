"""Numerical gluing of Delaunay ends onto minimal interiors.

Modules:
    delaunay   Delaunay profiles, periods, asymptotic estimate checks
    geometry   parametrized patches, fundamental forms, meshes
    jacobi     explicit Jacobi fields and Floquet exponents
    halfcyl    linear boundary-value problems on Delaunay half-cylinders
    graph_cmc  nonlinear CMC-1 normal graphs over an end
    matching   end deformations, interior solves and Cauchy-data matching
    cli        the ``delaunay-glue`` command
"""

__version__ = "0.1.0"
