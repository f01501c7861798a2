"""Concept Graph Networks: explainable-by-design GNNs with concept discovery,
logic explanations, and test-time concept interventions."""

__version__ = "0.1.0"
