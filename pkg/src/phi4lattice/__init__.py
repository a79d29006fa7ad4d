"""Lattice toolkit for the localisation bound of the dynamic Phi^4 model."""

from .geometry import (
    Lattice,
    Domain,
    Field,
    parabolic_distance,
    past_ball,
    shrink_domain,
    cone_witness,
    unit_box,
    save_field,
    load_field,
)

__version__ = "0.1.0"
