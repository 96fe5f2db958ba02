"""Data plumbing, synthetic data, metrics and the task pipeline."""
