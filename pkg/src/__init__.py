"""
Supnorm solver package: Hamiltonians, grid domains, Finsler distances,
minimizers, pointwise fields and the command-line tools.
"""
