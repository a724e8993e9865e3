"""boxcbf core package initialization."""
__all__ = [
    "config",
    "models",
    "ecbf",
    "filter",
    "qp_oracle",
    "systems",
    "sim",
    "scenario",
    "output",
    "cli",
]
