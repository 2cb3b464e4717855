"""Implicit, charge- and energy-conserving 1D-3V electrostatic PIC with an energy ledger."""

__version__ = "0.1.0"
