"""
Test package for the application.
"""
