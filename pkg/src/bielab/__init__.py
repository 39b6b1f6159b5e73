"""Layer-potential boundary integral solvers and diagnostics on Lipschitz boundaries."""

__version__ = "0.1.0"
