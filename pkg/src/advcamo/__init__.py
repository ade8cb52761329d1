"""Adversarial camouflage toolkit: differentiable texture rendering, toy
two-stage detectors, dense-proposal texture attacks, and the evaluation
harness that quantifies them."""

__version__ = "0.1.0"
