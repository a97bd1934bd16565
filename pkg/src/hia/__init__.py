"""Impact-targeted poisoning of temporal interaction graphs, with baselines and a desk-scale evaluation harness."""

__version__ = "0.1.0"
