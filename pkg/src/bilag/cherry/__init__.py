"""Cherry flows on the torus, their return maps and the Hess connection of a transverse pair."""

from .circlemap import (
    CircleDiffeo,
    CircleMapError,
    CircleMapSample,
    FlatPiece,
    conjugate_map,
    first_return_map,
    glue_maps,
    rigid_rotation,
    rotation_number,
    sup_distance,
    synthetic_cherry_map,
)
from .connection import PairError, cherry_pair_hess, well_definedness_sample
from .equivariance import EquivarianceReport, TorusDiffeo, equivariance_check, map_distance
from .field import (
    GOLDEN,
    CherryFieldError,
    CherryFieldSpec,
    CherryParams,
    PlanarField,
    classify_singularities,
    constant_field,
    make_cherry_field,
    torus_chart,
)
from .integrate import flow, integrate_to_section

__all__ = [
    "CherryFieldError", "CherryFieldSpec", "CherryParams", "CircleDiffeo", "CircleMapError", "CircleMapSample",
    "EquivarianceReport", "FlatPiece", "GOLDEN", "PairError", "PlanarField", "TorusDiffeo", "cherry_pair_hess",
    "classify_singularities", "conjugate_map", "constant_field", "equivariance_check", "first_return_map", "flow",
    "glue_maps", "integrate_to_section", "make_cherry_field", "map_distance", "rigid_rotation", "rotation_number",
    "sup_distance", "synthetic_cherry_map", "torus_chart", "well_definedness_sample",
]
