"""Deep CNN trainer for the croscale interchange formats."""

__version__ = "0.1.0"
