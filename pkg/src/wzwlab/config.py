"""Named tolerances, caps and run configuration.

Every numerical threshold used by the library lives here so that reports can
echo them verbatim.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

# Hermitian linear algebra
HERMITIAN_TOL = 1e-12          # entrywise, relative to max(1, max|G|)
PD_REL_TOL = 1e-12             # reject min eig < PD_REL_TOL * max eig
RANK_TOL = 1e-10               # relative singular-value cut for rank decisions
JUMP_MERGE_TOL = 1e-12         # jumps closer than this (relative) coincide
LOEWNER_TOL = 1e-10

# Caps
SYM_DIM_CAP = 20_000
NK_CAP = 256
MOMENT_DEGREE_CAP = 12

# Measures
QUAD_REL_TOL = 1e-8
MC_SEED = 0x575A5731           # "WZW1" in ASCII
MC_SAMPLES = 1_000_000

# Geometry
FD_REL_TOL = 1e-6              # Richardson error target for y0 derivatives
FD_STEP = 0.05                 # initial step in log-radial coordinate
FD_MAX_HALVINGS = 6
HILB_REFINE_TOL = 1e-6         # relative change allowed between fiber rules
POSITIVITY_TOL = 1e-8          # min eigenvalue of fiber Hessian
NEWTON_TOL = 1e-13
NEWTON_MAXITER = 200
MIN_NODES = 8

# Acceptance slack
WZW_LOWER_SLACK = 5e-3
SATURATION_TOL = 2e-3
CHERN_WEIL_TOL = 1e-5
MONOTONE_SLACK = 1e-9          # numerical floor when asserting monotone ladders
RATIO_SLACK = 1e-6


@dataclass(frozen=True)
class GridSpec:
    """Node counts of the (u, simplex) product rule."""

    base_nodes: int = 64
    fiber_nodes: int = 48

    def __post_init__(self):
        if self.base_nodes < MIN_NODES or self.fiber_nodes < MIN_NODES:
            raise ValueError(f"grid needs at least {MIN_NODES} nodes per dimension")


@dataclass(frozen=True)
class ExperimentConfig:
    degrees: tuple = (1, 0)
    t_grid: tuple = (-1.0, -0.5, 0.0, 0.5, 1.0)
    k_ladder: tuple = (1, 2, 4, 8)
    l_ladder: tuple = (2, 4, 8)
    s_ladder: tuple = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0)
    grid_spec: GridSpec = field(default_factory=GridSpec)
    seed: int = MC_SEED
    output_dir: str = "out"
    n_instances: int = 1000
    max_dim: int = 6
    k_max: int = 200

    def __post_init__(self):
        for name in ("degrees", "t_grid", "k_ladder", "l_ladder", "s_ladder"):
            val = getattr(self, name)
            object.__setattr__(self, name, tuple(val))
            if len(val) == 0:
                raise ValueError(f"{name} must be non-empty")
        for name in ("k_ladder", "l_ladder", "s_ladder"):
            val = getattr(self, name)
            if list(val) != sorted(val):
                raise ValueError(f"{name} must be sorted")
        if any(int(k) < 1 for k in self.k_ladder) or any(int(l) < 1 for l in self.l_ladder):
            raise ValueError("k and l ladders must be positive integers")
        if any(s < 0 for s in self.s_ladder):
            raise ValueError("s_ladder must be non-negative")
        if isinstance(self.grid_spec, dict):
            object.__setattr__(self, "grid_spec", GridSpec(**self.grid_spec))
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self):
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def tolerances():
    """All module-level constants, for echoing into reports."""
    return {k: v for k, v in globals().items() if k.isupper()}
