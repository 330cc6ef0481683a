"""
Core configuration, logging and numerical primitives.
"""
