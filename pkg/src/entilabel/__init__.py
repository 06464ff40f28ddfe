"""Categorization pipeline for free-form historical hobby and organization names.

Subpackages cover the full flow: corpus ingestion and hierarchy splitting,
human annotation storage with consensus, agreement/performance metrics, an
LLM annotation gateway with strict output validation, ensemble voting and
prompt optimization, and reporting.
"""

__version__ = "0.1.0"
