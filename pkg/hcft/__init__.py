"""
HC-FT Package

Heuristic clustering-driven feature fine-tuning for multiple-instance
classification of feature-vector bags.
"""

__version__ = "1.0.0"
