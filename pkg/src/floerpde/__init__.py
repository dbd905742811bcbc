"""Forced time-periodic solutions and Floer connecting curves for nonlocal Hamiltonian PDEs.

Modules, bottom up: ``spectral`` (Fourier fields and the free flow),
``diophantine`` (rotation-number arithmetic), ``nonlinearity`` (regularizing
nonlinearities and their gradients), ``dynamics`` (time stepping),
``periodic`` (harmonic balance), ``floer`` (connecting curves) and ``cli``.
"""

from importlib import metadata

from .spectral import EquationKind, Gauge, ModelParams, SpaceTimeField, SpectralField

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.0.0"

__all__ = ["EquationKind", "Gauge", "ModelParams", "SpaceTimeField", "SpectralField", "__version__"]
