"""Numerical laboratory for filtrations, Harder-Narasimhan measures and the
Wess-Zumino-Witten functional on split projective bundles over P^1."""

__version__ = "0.1.0"
