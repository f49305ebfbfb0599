"""Toffee: desk-scale subject-driven image pair construction and a unified
editing/generation model, built on tiny diffusion models over procedural
scenes."""

__version__ = "0.1.0"
