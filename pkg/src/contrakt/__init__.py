"""Contraction-certified neural feedback controllers.

Interval bounds on an MLP controller's Jacobian, neural contraction metrics,
a Gershgorin certificate for the closed loop, and the training, simulation
and LQR tooling around them.
"""

from . import certify, ibp, linalg, ncm, nn, sim, systems, train

__version__ = "0.1.0"

__all__ = ["certify", "ibp", "linalg", "ncm", "nn", "sim", "systems", "train", "__version__"]
