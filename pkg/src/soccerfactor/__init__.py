"""Bayesian player skill model for soccer goal counts.

Goals per match are ordered categories (0, 1, 2, 3+) driven by a player's
skill plus a team-performance term built from real-time league factors.
Skill has a baseline, a zero-sum player offset and two Hilbert-space GP
maturity effects (within a season and across seasons).
"""
__version__ = "0.1.0"
