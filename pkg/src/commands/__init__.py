"""Batch commands behind the cst-scan CLI."""
