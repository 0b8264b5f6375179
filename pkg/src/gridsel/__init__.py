"""Decentralized replica selection for data grids.

Storage nodes publish capability and performance records through a small
information service; each client's broker finds the replicas of a logical
file, matches their advertisements against its own requirements and picks
the best-ranked one.
"""

__version__ = "0.1.0"
