"""Bundled reference data."""

from importlib import resources

from ..network import Network, parse_network


def sps38_path():
    """Filesystem path of the bundled 38-bus reference system."""
    return resources.files(__package__).joinpath("sps38.json")


def load_sps38() -> Network:
    """The 38-bus, 54-line DC shipboard reference system."""
    return parse_network(sps38_path().read_text(encoding="utf-8"))
