"""Anomaly segmentation with multi-source domain-adversarial training and contrastive pixel alignment, at toy scale."""

__version__ = "0.1.0"
