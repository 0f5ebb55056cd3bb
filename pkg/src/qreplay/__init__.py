"""Continual-learning benchmark engine.

Query-only attention with a replay buffer, full-attention and
MAML-with-replay learners, BP/CBP baselines, permuted-image and slowly
changing regression streams, forward/backward evaluation, and Hessian
effective-rank diagnostics.
"""

__version__ = "0.1.0"
