"""Service, CLI, and benchmark surface over the orchestration core."""
