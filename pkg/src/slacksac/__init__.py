"""Maximum-entropy actor-critic with a learned slack on the entropy bound.

The package provides a small float64 network core, a squashed Student-t
policy, the slack mechanism that keeps policy entropy above a chosen floor,
replay and training loops, three desk-scale benchmark environments, and an
evaluation harness with rank-sum significance tests.
"""

__version__ = "0.1.0"
