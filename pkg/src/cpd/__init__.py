"""Contact plan design toolkit for satellite constellations.

Evaluates plan quality as all-pairs best delivery time via contact graph
routing, optimizes plans with simulated annealing under feasibility
constraints, and can delegate objective evaluation to an external surrogate
process over a line-delimited JSON protocol.
"""

__version__ = "0.1.0"
