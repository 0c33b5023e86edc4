"""
Experiment harness: configuration, runner, metrics and self-checks
"""
