"""Best policy identification in contextual linear bandits."""

__version__ = "0.1.0"
