"""Wave equation with random initial data: spectral solvers, covariance dynamics and CLT experiments."""

__version__ = "0.1.0"
