"""Low-rank adaptation as noisy-gradient fine-tuning: numerical laboratory."""

__version__ = "0.1.0"
