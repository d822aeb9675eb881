"""
kmr
---
Exact recovery of k-median clusterings by the LP relaxation: instance
generation under the stochastic ball model, LP solving, dual certificates,
analytic functions of the model and Monte Carlo campaigns.
"""

__version__ = "0.1.0"
