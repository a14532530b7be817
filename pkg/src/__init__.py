"""
Loss-based model priors for Bayesian variable selection
Exact enumeration of the linear regression model space under the robust
parameter prior, with uniform, Scott & Berger and loss-based model priors.
"""

__version__ = "1.0.0"
__author__ = "lossprior developers"
__description__ = "Exact-enumeration Bayesian variable selection with objective model priors"
