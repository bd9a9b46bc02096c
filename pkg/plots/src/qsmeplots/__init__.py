"""qsmeplots: static figures from qsme CSV outputs.

Four figure kinds, one spec per figure:
  trajectory-fan   per-trajectory observable traces from records.csv
  lyapunov-decay   ensemble mean with fitted exponential from ensemble.csv
  click-histogram  waiting-time histogram with fitted exponential rate
  lindblad-overlay stochastic ensemble band against a deterministic reference
"""

from .render import FigureSpec, load_spec, render

__version__ = "0.1.0"
