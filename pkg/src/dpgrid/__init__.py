"""Decentralized, privacy-preserving maintenance and commitment planning.

A numpy/scipy library in five layers:

* network case handling and region partitioning (`dpgrid.case`, `dpgrid.cases`)
* regional MIQP assembly for joint maintenance and unit commitment
  (`dpgrid.regional`)
* a bundled convex-QP branch-and-bound engine with pluggable backends
  (`dpgrid.miqp`)
* phase-angle privacy mechanism, EWMA consensus and control-chart based
  convergence monitoring (`dpgrid.privacy`, `dpgrid.consensus`, `dpgrid.chart`)
* a lockstep multi-region simulator and experiment drivers
  (`dpgrid.protocol`, `dpgrid.bench`, `dpgrid.cli`)
"""

from .case import (
    Generator,
    Line,
    MaintenanceSpec,
    PowerCase,
    RegionPartition,
    dump_case,
    dump_partition,
    load_case,
    load_partition,
    maintenance_windows,
    partition,
    scaled_demand,
)
from .errors import (
    CaseError,
    ConfigError,
    DpgridError,
    IntegralityError,
    ModelError,
    PartitionError,
    PrivacyError,
    ProtocolError,
    SolverError,
)
from .miqp import (
    MiqpProblem,
    MiqpSolution,
    ProblemBuilder,
    get_backend,
    register_backend,
    solve_miqp,
    solve_qp,
    write_lp,
)

__all__ = [
    "CaseError",
    "ConfigError",
    "DpgridError",
    "Generator",
    "IntegralityError",
    "Line",
    "MaintenanceSpec",
    "MiqpProblem",
    "MiqpSolution",
    "ModelError",
    "PartitionError",
    "PowerCase",
    "PrivacyError",
    "ProblemBuilder",
    "ProtocolError",
    "RegionPartition",
    "SolverError",
    "dump_case",
    "dump_partition",
    "get_backend",
    "load_case",
    "load_partition",
    "maintenance_windows",
    "partition",
    "register_backend",
    "scaled_demand",
    "solve_miqp",
    "solve_qp",
    "write_lp",
]

__version__ = "0.1.0"
