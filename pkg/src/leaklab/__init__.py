"""leaklab: how soft-label distillation leaks a teacher's memorised data."""

__version__ = "0.1.0"
