"""Numerical services: linear algebra, model, optimizers, post-processing, data and harness."""
