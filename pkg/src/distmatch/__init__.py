"""Optimal-transport distribution matching for multi-agent teams."""

__version__ = "0.1.0"

from .assignment import (  # noqa: E402
    CyclePlan,
    LocalPlan,
    apply_residual_update,
    barycenter,
    centralized_selection,
    completing_square,
    greedy_local_assign,
)
from .control import (  # noqa: E402
    ControlAffineModel,
    LtiModel,
    gramian,
    lti_optimal_controls,
    nonlinear_horizon_controls,
    nonlinear_one_step_control,
    pmp_residual,
    reachability_matrix,
    unicycle,
)
from .decentral import (  # noqa: E402
    AgentWeights,
    CommGraph,
    MemoryStore,
    build_comm_graph,
    decentralized_selection,
    memory_correction,
    memory_refresh,
)
from .engine import Scenario, run_cycle, run_simulation, surrogate_cost  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .measures import (  # noqa: E402
    DiscreteMeasure,
    TransportPlan,
    make_uniform_measure,
    sample_target_from_mixture,
    w2_distance,
    w2_exact,
)
