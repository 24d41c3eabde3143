"""Coefficient maps, Q1 finite element solves, and paired-resolution datasets."""

from .assembly import FemProblem, Source, assemble_full, assemble_stiffness, interior_mask
from .coefficients import CoefficientMap, constituent_maps, gen_coefficient, mix_partition, parse_pattern
from .solver import GridField, fem_solve, solve_cg
from .dataset import (
    DatasetHeader,
    DatasetSample,
    build_dataset,
    build_samples,
    check_resolutions,
    load_dataset,
    read_dataset,
    read_header,
    write_dataset,
)
