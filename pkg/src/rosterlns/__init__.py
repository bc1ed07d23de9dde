"""Large neighbourhood search for nurse rostering on a small CP engine."""

from importlib import resources

from .instance import Instance, Roster, load_instance, parse_instance, serialize_instance, validate_roster
from .penalty import roster_cost, row_costs, soft_card_mu

__all__ = [
    "Instance",
    "Roster",
    "bundled_instance",
    "load_instance",
    "parse_instance",
    "roster_cost",
    "row_costs",
    "serialize_instance",
    "soft_card_mu",
    "validate_roster",
]


def bundled_instance_path():
    return resources.files(__package__) / "data" / "gpost.rst"


def bundled_instance() -> Instance:
    return parse_instance(bundled_instance_path().read_text(encoding="utf-8"))
