"""
OPF feasible-space exploration toolkit
"""
__version__ = "1.0.0"
