"""Multi-USV target defense: 3-DoF vessel simulator, Boids baseline and an adaptive-residual SAC learner."""

__version__ = "0.1.0"
