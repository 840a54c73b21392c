"""Sequential expanding dynamics: transfer operators, Gibbs measures and limit-theorem diagnostics."""

__version__ = "0.1.0"

__all__ = ["__version__"]
