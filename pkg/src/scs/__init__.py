"""Persona-driven synthetic computers and long-horizon work simulations."""

__version__ = "0.1.0"
