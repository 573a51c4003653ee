"""Schema-agnostic multilingual EHR-to-text prediction pipeline."""

__version__ = "0.1.0"
