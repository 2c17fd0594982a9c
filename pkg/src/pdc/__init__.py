"""Two-pump parametric down-conversion toolkit.

Phase-matching geometry of a uniaxial crystal pumped by two tilted beams,
few-mode parametric gain theory (including the sqrt(2) and Golden-Ratio
collective enhancements), and a stochastic split-step field simulator with
quantitative hot-spot analysis.
"""

__version__ = "0.1.0"
