"""Exact tooling for randomized obviously strategy-proof auctions.

The package builds deterministic clock auctions as extensive-form
protocols, verifies obvious strategy-proofness (and individual
rationality / no-negative-transfers) by exhaustive tree analysis,
assembles the randomized mechanisms studied here as explicit support
distributions, and measures their welfare guarantees exactly.
"""

__version__ = "0.1.0"
