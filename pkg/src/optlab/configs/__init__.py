"""Bundled smoke configurations (JSON)."""
