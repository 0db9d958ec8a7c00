"""poa: static probabilistic output analysis.

Turns a first-order functional program plus a symbolic input distribution
into a closed-form output distribution where possible, with sound bounds and
expected-value intervals otherwise, all validated against an exhaustive
enumeration oracle.
"""

__version__ = "0.1.0"
