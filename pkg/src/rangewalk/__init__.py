"""Random walks on the range of a lattice random walk."""

from .environment import Environment, TwoSidedEnvironment
from .estimators import (
    BlockSample,
    ConstantEstimates,
    ErgodicConstants,
    PowerLawFit,
    dimension_fit,
    kappa,
    sample_blocks,
    scaling_limit_test,
)
from .graph import RangeGraph, ball, block_decompose, build_graph, graph_distance, volume
from .lattice import WalkPath, cut_times, gen_path, loop_erase, path_from_points, straight_path
from .resistance import ConductanceNetwork, CutChain, effective_resistance
from .walk import (
    cut_chain,
    evolve_distribution,
    exit_time,
    expected_exit_time,
    expected_H1,
    jump_chain_law,
    occupation_density,
    simulate,
)

__all__ = [
    "BlockSample",
    "ConductanceNetwork",
    "ConstantEstimates",
    "CutChain",
    "Environment",
    "ErgodicConstants",
    "PowerLawFit",
    "RangeGraph",
    "TwoSidedEnvironment",
    "WalkPath",
    "ball",
    "block_decompose",
    "build_graph",
    "cut_chain",
    "cut_times",
    "dimension_fit",
    "effective_resistance",
    "evolve_distribution",
    "exit_time",
    "expected_H1",
    "expected_exit_time",
    "gen_path",
    "graph_distance",
    "jump_chain_law",
    "kappa",
    "loop_erase",
    "occupation_density",
    "path_from_points",
    "sample_blocks",
    "scaling_limit_test",
    "simulate",
    "straight_path",
    "volume",
]
