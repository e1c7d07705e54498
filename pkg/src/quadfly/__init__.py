"""Quadrotor flight learning: simulator, TD3 training, tracking tasks and a PID baseline."""

__version__ = "0.1.0"
