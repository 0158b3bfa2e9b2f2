"""Semi-centralized distributed branch-and-bound, with minimum vertex cover
as the worked example."""

from .center import Center, CenterState, build_waiting_lists, get_next_working_node, handle_center_message
from .central_baseline import CentralCenter, CentralQueueState
from .problem import INF, Branch, ProblemAdapter, validate_adapter
from .runtime import run_local, run_tcp
from .sim import SimCluster, simulate
from .tasktree import TaskTree
from .transport import Message, SimNetwork, Tag
from .vcover import Graph, VertexCoverProblem, brute_force_mvc, gen_gnp, mvc_sequential, read_dimacs
from .worker import Worker, WorkerConfig, run_worker

__version__ = "0.1.0"

__all__ = [
    "Branch", "Center", "CenterState", "CentralCenter", "CentralQueueState", "Graph", "INF",
    "Message", "ProblemAdapter", "SimCluster", "SimNetwork", "Tag", "TaskTree",
    "VertexCoverProblem", "Worker", "WorkerConfig", "brute_force_mvc", "build_waiting_lists",
    "gen_gnp", "get_next_working_node", "handle_center_message", "mvc_sequential",
    "read_dimacs", "run_local", "run_tcp", "run_worker", "simulate", "validate_adapter",
]
