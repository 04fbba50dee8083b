"""
seprank - separation-rank analysis for unnormalized self-attention networks.

Empirical grid-tensor ranks, analytic bounds, constructive witnesses and an
architecture auditor for the embedding-rank and attention-overhang bottlenecks.
"""

__version__ = '0.1.0'
