"""Coherent phase, energy and amplitude estimation at desk scale.

Submodules are imported lazily by callers; importing the package itself only
exposes the version string so that the command-line launcher can configure
thread counts before numpy is loaded.
"""

__version__ = "0.1.0"
