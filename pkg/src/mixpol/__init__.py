"""mixpol: a policy-gradient laboratory for mixture policies in
entropy-regularized actor-critic reinforcement learning."""

__version__ = "0.1.0"
