"""Shared numerical constants used across all modules."""

import numpy as np

#: Conversion constant between the lattice Laplacian of a potential and its
#: curvature density on the unit-area torus: the curvature contribution of a
#: potential u is ``KAPPA * laplacian(u)`` per unit area.  Every module reads
#: this single shared value so that no unit drift is possible.
KAPPA: float = 0.25 / np.pi

#: Exponent guard bounds for ``exp(beta*u)``-style weights.  Arguments above
#: ``EXP_MAX`` are clipped (and flagged), arguments below ``EXP_MIN`` are
#: mapped to an exact zero weight (and counted).
EXP_MAX: float = 700.0
EXP_MIN: float = -700.0

#: Floor applied to the class volume inside logarithmic initial guesses, so
#: that ``log(max(V, VOLUME_FLOOR))`` is always finite.
VOLUME_FLOOR: float = 1e-8
