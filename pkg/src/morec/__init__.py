"""morec: a multi-objective RL laboratory for fairness-aware recommendation.

One preference-conditioned actor-critic policy is trained across the whole
utility/fairness trade-off simplex; afterwards any preference vector can be
evaluated without retraining and the approximate Pareto frontier between
ranking accuracy and long-tail exposure can be extracted from the single
checkpoint.
"""

__version__ = "0.1.0"
