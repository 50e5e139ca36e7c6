"""Asymptotic posterior marginals for proportional-regime Bayesian GLMs.

Subpackages:
  model         GLM/prior/signal declarations and regularity validators
  integrate     log-concave 1-D quadrature and seeded outer Monte Carlo
  scalar_system coupled fixed-point equations for the order parameters
  predictor     limiting marginal laws, posterior-mean law, MSE curves
  simulator     finite-sample data generation and HMC posterior sampling
  diagnostics   empirical-vs-theoretical comparison and closed-form oracles
  cli           command-line entry point
"""

__version__ = "0.1.0"
