"""MIDAS: decision support for fungicide treatment of powdery mildew in winter wheat.

The package layers a discrete influence-diagram engine (factors, junction
trees, strong-order decision optimization) under a crop-specific decision
model assembled on a thermal-time scale, and exposes recommendation and
what-if services over a CLI and an HTTP API.
"""

from .factors import (
    ContradictoryEvidenceError,
    DiscreteVariable,
    Evidence,
    Factor,
    FactorError,
    marginalize_max,
    marginalize_sum,
    multiply,
    normalize,
    reduce,
)
from .graphs import (
    EliminationOrder,
    GraphError,
    InfluenceDiagram,
    JunctionTree,
    build_junction_tree,
    d_separated,
    moralize,
    strong_order,
    total_clique_size,
    triangulate,
)
from .inference import (
    Policy,
    SolveResult,
    compile_network,
    enumerate_policies,
    expected_utility_of_policy,
    joint_brute_force,
    propagate,
    solve_id,
)

__version__ = "0.1.0"
