"""Shared utilities: constants, exceptions and formatters."""
