"""Agents in coupled energy, information and payment flow networks."""

from importlib import resources

__version__ = "0.1.0"


def data_path(name: str):
    """Path of a bundled data file (ieee14.cdf, twobus.cdf, ev_scenario.json, ...)."""
    return resources.files(__name__) / "data" / name
