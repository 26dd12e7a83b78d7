"""Plotting for recovery-sweep CSV results."""

from .convergence import SweepFrame, load_sweep, plot_convergence

__all__ = ["SweepFrame", "load_sweep", "plot_convergence"]
