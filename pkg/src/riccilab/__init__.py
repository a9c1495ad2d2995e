"""Desk-scale numerical laboratory for coupled Ricci flow systems.

Periodic-grid tensor calculus, right-hand sides and explicit integration
for four coupled geometric flows (harmonic-map, warped-product, locally
R^N-invariant, connection Ricci flow), their linearized stability
operators and spectra, and maximum-principle bound monitors.
"""

__version__ = "0.1.0"

from .backend import BACKEND  # noqa: F401
