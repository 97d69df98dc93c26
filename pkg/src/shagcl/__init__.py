"""Stacked hybrid-attention encoding and group collaborative learning for
unbiased predicate classification, on a numpy-only autodiff core."""

__version__ = "0.1.0"
