"""Thermal modelling and temperature control of alkaline electrolysis systems."""
