"""
Test package for the supnorm solver.
"""
