"""Constraint-based clinical trial retrieval over relational gate stores.

The package turns eligibility programs and patient fact sheets into
executable conjunctive-normal-form gates, stores them as relational
data, and answers trial-patient retrieval queries whose result set
provably covers every pair a brute-force evaluator would accept.
"""

__version__ = "0.1.0"
