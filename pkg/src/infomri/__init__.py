"""Task-adapted compressed-sensing MRI: learned k-space sampling, variational
task heads, analytic measurement entropy and evaluation metrics."""

__version__ = "0.1.0"
