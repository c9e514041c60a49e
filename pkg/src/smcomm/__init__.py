"""Semantic multiverse communication toolkit."""
