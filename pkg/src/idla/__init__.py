"""Internal DLA with sources on the hyperplane {0} x Z^{d-1}.

Modules: `lattice` (geometry), `walk` (keyed walks and exact exit laws),
`aggregate` (construction protocols), `donut` (cone crossing machinery),
`stats` (observables), `render` and `cli`.
"""

from .aggregate import (Aggregate, BuildReport, build_A_n_M, build_A_n_M_clocks,
                        build_truncated_infinite, build_waves, fire_levels, load_snapshot,
                        save_snapshot, smash_sum)
from .lattice import Ball, ConeSpec, Slab, SlabBorder, Strip, Tile
from .walk import ParticleTrace, RngKey, exact_exit_distribution, run_until_exit

__version__ = "0.1.0"

__all__ = [
    "Aggregate", "BuildReport", "build_A_n_M", "build_A_n_M_clocks", "build_waves",
    "build_truncated_infinite", "fire_levels", "smash_sum", "save_snapshot", "load_snapshot",
    "Ball", "ConeSpec", "Slab", "SlabBorder", "Strip", "Tile", "ParticleTrace", "RngKey",
    "exact_exit_distribution", "run_until_exit",
]
