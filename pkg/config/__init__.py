"""
Configuration package for the supnorm solver.
"""
