"""Command-line harness: configuration, I/O, ingestion and classification."""
