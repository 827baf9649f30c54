"""Model-aided learning for wireless network design.

Oracles (fractional-programming power control, stochastic-geometry density
optimization, Monte-Carlo ground truth), a numpy MLP, and the pipelines that
train on model data and refine on scarce empirical data.
"""

__version__ = "0.1.0"
