"""Desk-scale training, evaluation protocol, oracles and CLI."""
