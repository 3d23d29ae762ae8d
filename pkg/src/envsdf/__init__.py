"""Differentiable SDF volume renderer with decomposed neural environment
lighting, plus the analytic physically-based oracle it trains against."""

__version__ = "0.1.0"
