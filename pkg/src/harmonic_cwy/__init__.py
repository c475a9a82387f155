"""Total conserved quantities of harmonic-asymptotics initial data: ADM, BORT and CWY."""

from .conserved import ConservedReport, adm_quantities, conserved_report, cwy_closed_form, cwy_numeric
from .initial_data import HarmonicAsymptotics, complete_expansion
from .sphere import SphereGrid

__all__ = [
    "ConservedReport",
    "HarmonicAsymptotics",
    "SphereGrid",
    "adm_quantities",
    "complete_expansion",
    "conserved_report",
    "cwy_closed_form",
    "cwy_numeric",
]
