"""Quantum optomechanical heat engine: rates, master-equation oracle, phase space and thermodynamics."""

__version__ = "0.1.0"
