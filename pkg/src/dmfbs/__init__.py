"""Transfer-learning hyperparameter optimization with a differentiable
metafeature surrogate."""

__version__ = "0.1.0"
