"""Multi-agent driving benchmark: a 2D kinematic simulator, seven deep-RL learners,
adversarial training against frozen victims, and driving-performance metrics."""

__version__ = "0.1.0"
