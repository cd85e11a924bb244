"""Adaptive allocation of recruitment resources across sites for representative cohorts."""

__version__ = "0.1.0"

from .demographics import (  # noqa: E402
    DEFAULT_SCHEMA,
    AttributeSchema,
    CohortCounts,
    JointDistribution,
    MarginalSet,
    SiteModel,
    joint_from_marginals,
    load_table,
    marginals_of_joint,
)
from .metrics import DistanceMetric, evaluate  # noqa: E402
from .policy import PolicyKind, SolverConfig  # noqa: E402
from .belief import PriorScheme  # noqa: E402
from .simulator import SimulationConfig, run_simulation  # noqa: E402
from .experiments import ExperimentSpec, run_replicates, sweep  # noqa: E402
