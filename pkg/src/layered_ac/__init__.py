"""Layered solutions of the vector Allen-Cahn system."""
