"""holoforge: differentiable single- and multi-color 3D phase-only holography."""

__version__ = "0.1.0"
