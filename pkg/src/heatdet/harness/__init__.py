"""Synthetic benchmark, training loop, evaluation and command-line tools."""
