"""PPO with temporally correlated colored-noise exploration."""

__version__ = "0.1.0"
