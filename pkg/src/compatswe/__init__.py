"""Energy-enstrophy conserving compatible finite elements for the rotating shallow water equations."""

__version__ = "0.1.0"
