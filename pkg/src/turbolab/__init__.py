"""Numerical companion for analytic approximation arguments in incompressible Euler.

Submodules cover spectral fields on the torus, Komatsu-type analytic norms,
heat-kernel mollification on the disk, analytic domain approximation, the
boundary-fitting diffeomorphism, the div-curl fixed point and Picard-iterated
Euler evolution with its a priori monitors.
"""
__version__ = "0.1.0"
