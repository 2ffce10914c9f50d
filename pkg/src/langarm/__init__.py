"""Language-instructed robot arm control learned end to end with PPO."""

__version__ = "0.1.0"
