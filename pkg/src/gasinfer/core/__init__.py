"""Core configuration, logging and shared domain models."""
