"""Tests for gasinfer."""
