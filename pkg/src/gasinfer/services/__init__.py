"""Execution backends, hub strategies and the evaluation harness."""
