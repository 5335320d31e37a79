"""Dense float32 math and deterministic random streams."""
