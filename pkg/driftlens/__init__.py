"""
driftlens: CKA-based domain-shift analytics

Synthesizes rPPG-like domains, trains one toy model per (domain, fold),
scores cross-dataset heart-rate error and relates it to representation
similarity metrics built on centered kernel alignment. DS-diff, the metric
that needs no target labels, also drives model selection.
"""

__version__ = '1.0.0'
