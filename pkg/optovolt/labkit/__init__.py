"""
The infrastructure the analyses are built on: immutable models, the error hierarchy, sentinels and `SensorLab`, the
context measurement pipelines run in.
"""
