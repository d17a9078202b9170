"""diffdyn: a differentiable 3D rigid-body simulator.

Impulse-based velocity stepping with a projected Gauss-Seidel contact solver
and semi-implicit Euler integration, recorded on a reverse-mode tape so that
rollout losses can be differentiated through time with respect to controller
parameters and initial conditions.
"""

__version__ = "0.1.0"
