"""Packet-drop robust ratio consensus: protocol, lossy-network simulator and moment oracle."""
from .errors import (
    DimensionTooLarge,
    GenerationTimeout,
    InfeasibleDemand,
    InfeasibleDemandWarning,
    InvalidVertex,
    MassLeak,
    NotColumnStochastic,
    NotConverged,
    NotStronglyConnected,
    RatioConsensusError,
    UnknownSender,
    ZeroInitialSum,
)
from .graph import DirectedGraph, from_edge_list, is_strongly_connected, random_strongly_connected, weight_matrix
from .kernels import BACKEND
from .protocol import (
    Message,
    NodeState,
    init_average_consensus,
    init_resource_coordination,
    make_broadcast,
    ratio_estimate,
    receive_and_update,
)
from .simulator import DropModel, LinkRealization, SimulationTrace, run, sample_mask, step, threshold_C, total_mass
from .coordination import ResourceParams, average_estimate, resource_allocation

__version__ = "0.1.0"
