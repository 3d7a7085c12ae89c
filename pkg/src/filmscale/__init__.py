"""filmscale: scaling regimes, limiting plate functionals, and curvature
diagnostics for shallowly prestrained thin elastic films."""

__version__ = "0.1.0"
