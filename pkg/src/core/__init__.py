"""Dimensional analysis, covariant models, simulators and symmetry audits."""
